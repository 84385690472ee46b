"""
Report Generator Component for Streamlit
Generates reconstruction reports and exports
"""

import json
import logging
from datetime import datetime
from typing import Any, Dict

import numpy as np
import streamlit as st

from src.metrics import EvalReport, reports_frame

logger = logging.getLogger(__name__)


class ReportGeneratorComponent:
    """Component for generating and exporting reconstruction reports."""

    def __init__(self):
        self.report_types = [
            "Reconstruction Summary",
            "Per-frame Quality",
            "Run Details",
        ]

    def render(self, results: Dict[str, Any] = None):
        """
        Main render method for the report generator.

        Args:
            results: Reconstruction results to generate reports from
        """
        st.subheader("📊 Report Generator")

        if not results or not results.get('reports'):
            st.warning("⚠️ No reconstruction available. Please run a reconstruction first.")
            return

        selected_type = st.selectbox(
            "Select Report Type:",
            self.report_types,
            help="Choose the type of report to generate"
        )

        col1, col2 = st.columns([3, 1])
        with col2:
            if st.button("📄 Generate Report", type="primary"):
                self._generate_report(selected_type, results)

    def _generate_report(self, report_type: str, results: Dict[str, Any]):
        try:
            report = self.build_report(report_type, results)
        except Exception as e:
            logger.exception("report generation failed")
            st.error(f"❌ Error generating report: {str(e)}")
            return

        if 'usage_stats' in st.session_state:
            st.session_state.usage_stats['reports_generated'] += 1

        st.success("✅ Report generated successfully!")
        with st.expander("📖 Report Preview", expanded=True):
            st.markdown(report['content'])
        self._render_download_options(report, results)

    def build_report(self, report_type: str, results: Dict[str, Any]) -> Dict[str, Any]:
        """Build a markdown report of the given type"""
        builders = {
            "Reconstruction Summary": self.build_summary,
            "Per-frame Quality": self.build_frame_quality,
            "Run Details": self.build_run_details,
        }
        if report_type not in builders:
            raise ValueError(f"unknown report type: {report_type}")
        stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        return {
            'content': builders[report_type](results),
            'type': 'markdown',
            'filename': f"{report_type.lower().replace(' ', '_').replace('-', '_')}_{stamp}",
        }

    def build_summary(self, results: Dict[str, Any]) -> str:
        reports: Dict[str, EvalReport] = results['reports']
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        psnr_values = [r.psnr_mean for r in reports.values()]

        content = f"""
# Reconstruction Summary

**Generated:** {timestamp}
**Method:** {results.get('method', 'Unknown')}
**Samples:** {len(reports)}
**Mean PSNR:** {np.mean(psnr_values):.2f} dB

## Results

| Sample | Frames | PSNR (dB) | SSIM | Runtime (s) |
|---|---|---|---|---|
"""
        for name, report in reports.items():
            ssim_text = f"{report.ssim_mean:.4f}" if np.isfinite(report.ssim_mean) else "n/a"
            content += (
                f"| {name} | {report.frames} | {report.psnr_mean:.2f} | "
                f"{ssim_text} | {report.runtime_s:.3f} |\n"
            )

        uncertainty = results.get('uncertainty') or {}
        if uncertainty:
            content += "\n## Uncertainty\n\n"
            for name, um in uncertainty.items():
                content += f"- **{name}:** {um.binarized.mean():.1%} of pixels above mean variance\n"
        return content

    def build_frame_quality(self, results: Dict[str, Any]) -> str:
        content = "\n# Per-frame Quality\n\n"
        for name, report in results['reports'].items():
            content += f"## {name}\n\n"
            for t, value in enumerate(report.per_frame_psnr):
                content += f"- frame {t}: {value:.2f} dB\n"
            content += "\n"
        return content

    def build_run_details(self, results: Dict[str, Any]) -> str:
        details = {
            'method': results.get('method'),
            'parameters': results.get('parameters', {}),
            'op_counts': {name: r.op_counts for name, r in results['reports'].items()},
        }
        return f"""
# Run Details

```json
{json.dumps(details, indent=2, default=str)}
```
"""

    def build_csv(self, results: Dict[str, Any]) -> str:
        """Reports as CSV text in the column order used by the command line"""
        rows = [report.to_row(name) for name, report in results['reports'].items()]
        return reports_frame(rows).to_csv(index=False)

    def _render_download_options(self, report: Dict[str, Any], results: Dict[str, Any]):
        st.subheader("📥 Download Options")

        col1, col2, col3 = st.columns(3)
        with col1:
            st.download_button(
                label="📄 Download as Markdown",
                data=report['content'],
                file_name=f"{report['filename']}.md",
                mime="text/markdown"
            )
        with col2:
            st.download_button(
                label="📈 Download as CSV",
                data=self.build_csv(results),
                file_name=f"{report['filename']}.csv",
                mime="text/csv"
            )
        with col3:
            st.download_button(
                label="📊 Download as JSON",
                data=json.dumps({
                    'generated_at': datetime.now().isoformat(),
                    'rows': [r.to_row(name) for name, r in results['reports'].items()],
                }, indent=2, default=float),
                file_name=f"{report['filename']}.json",
                mime="application/json"
            )
