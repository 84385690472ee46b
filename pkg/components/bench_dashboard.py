"""
Attention Benchmark Dashboard Component for Streamlit
"""

import logging
from typing import Any, Dict, List

import pandas as pd
import streamlit as st

from src.benchmark import DEFAULT_GRID, BenchCase, bench_attention, scaled
from src.ctm_network import ATTENTION_MODES

logger = logging.getLogger(__name__)

# Optional plotly imports for advanced charts
try:
    import plotly.express as px
    PLOTLY_AVAILABLE = True
except ImportError:
    px = None
    PLOTLY_AVAILABLE = False


class BenchDashboardComponent:
    """Attention cost benchmark plus session usage metrics for the sidebar"""

    def render(self):
        """Render the benchmark page"""

        st.header("⏱️ Attention Benchmark")
        st.write("Analytic vs counted multiply-accumulates of full, blocked and dilated attention.")

        col1, col2, col3 = st.columns(3)
        with col1:
            modes = st.multiselect("Modes", list(ATTENTION_MODES), default=list(ATTENTION_MODES))
        with col2:
            repeats = st.number_input("Timing repeats", min_value=1, max_value=20, value=1)
        with col3:
            timing = st.checkbox("Measure runtime", value=True)

        if st.button("🚀 Run Benchmark", type="primary"):
            with st.spinner("Counting operations..."):
                try:
                    st.session_state.bench_results = bench_attention(
                        DEFAULT_GRID, modes=modes, repeats=int(repeats), timing=timing
                    )
                except Exception as e:
                    logger.exception("benchmark failed")
                    st.error(f"❌ Benchmark failed: {str(e)}")
                    return

        df = st.session_state.get('bench_results')
        if df is None or df.empty:
            st.info("Run the benchmark to see operation counts")
            return

        self._render_results(df)

        with st.expander("📐 Scaling with frame height"):
            self._render_scaling(modes)

    def _render_results(self, df: pd.DataFrame):
        mismatches = int((~df['match']).sum())
        if mismatches:
            st.error(f"❌ {mismatches} row(s) where counted MACs differ from the formula")
        else:
            st.success(f"✅ All {len(df)} counts match the analytic formula")

        st.dataframe(df, use_container_width=True)

        if PLOTLY_AVAILABLE:
            fig = px.bar(df, x="name", y="measured", color="mode", barmode="group", log_y=True,
                         labels={"measured": "MACs", "name": "case"})
            st.plotly_chart(fig, use_container_width=True)
        else:
            st.bar_chart(df.pivot_table(index="name", columns="mode", values="measured"))

    def _render_scaling(self, modes: List[str]):
        base = BenchCase(8, 8, 4, 8, 4, 2, 4, 2)
        df = self.scaling_frame(base, modes, factors=(1, 2, 4))
        if PLOTLY_AVAILABLE:
            fig = px.line(df, x="height", y="measured", color="mode", markers=True, log_y=True)
            st.plotly_chart(fig, use_container_width=True)
        else:
            st.line_chart(df.pivot_table(index="height", columns="mode", values="measured"))
        st.caption("FSA grows quadratically in the token count; BDA and DSA grow linearly.")

    def scaling_frame(self, base: BenchCase, modes: List[str], factors=(1, 2, 4)) -> pd.DataFrame:
        """MAC counts of `base` stretched vertically by each factor, without timing"""
        grid = [scaled(base, f) for f in factors]
        return bench_attention(grid, modes=modes, timing=False)[["height", "mode", "analytic", "measured"]]

    def render_sidebar(self):
        """Render session metrics in the sidebar"""

        st.header("📊 Session")
        usage_stats: Dict[str, Any] = st.session_state.get('usage_stats', {
            'reconstructions': 0,
            'reports_generated': 0,
            'frames_reconstructed': 0,
        })

        st.metric(
            "Reconstructions",
            usage_stats.get('reconstructions', 0),
            help="Reconstruction runs in this session"
        )
        st.metric(
            "Frames Reconstructed",
            usage_stats.get('frames_reconstructed', 0),
            help="Total frames recovered across runs"
        )
        st.metric(
            "Reports Generated",
            usage_stats.get('reports_generated', 0),
            help="Number of reports created"
        )

        if 'app_settings' in st.session_state:
            with st.expander("⚙️ Settings"):
                settings = st.session_state.app_settings
                st.write(f"**Float dtype:** {settings.FLOAT_DTYPE}")
                st.write(f"**Strict math:** {settings.STRICT_MATH}")
                st.write(f"**Data dir:** `{settings.DATA_DIR}`")
