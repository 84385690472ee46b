"""
Reconstruction Display Component for Streamlit
Shows reconstructed frames, error maps, uncertainty maps and spectra
"""

from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import streamlit as st

from src.metrics import EvalReport, spectrum_profile
from src.uncertainty import UncertaintyMap

# Optional plotly imports for heatmaps
try:
    import plotly.express as px
    import plotly.graph_objects as go
    PLOTLY_AVAILABLE = True
except ImportError:
    px = None
    go = None
    PLOTLY_AVAILABLE = False


class ReconstructionDisplayComponent:
    """Component for displaying reconstruction results."""

    def render(self, results: Dict[str, Any]):
        """
        Main render method for displaying reconstruction results.

        Args:
            results: dict with 'samples', 'recons', 'reports' and optionally
                     'uncertainty' and 'history'
        """
        if not results or not results.get('recons'):
            st.info("No reconstruction results to display")
            return

        reports: Dict[str, EvalReport] = results['reports']
        self.render_summary(results.get('method', ''), reports)

        names = list(results['recons'])
        name = st.selectbox("Sample", names) if len(names) > 1 else names[0]
        sample = next(s for s in results['samples'] if s.scene == name)
        recon = results['recons'][name]

        frame = st.slider("Frame", 0, recon.shape[-1] - 1, 0) if recon.shape[-1] > 1 else 0
        self.render_frames(sample.cube.values, recon, frame)

        um = (results.get('uncertainty') or {}).get(name)
        if um is not None:
            self.render_uncertainty(um, frame)

        self.render_spectrum(sample.cube.values, recon, frame)
        self.render_frame_table(reports[name])

        history = (results.get('history') or {}).get(name)
        if history:
            self.render_history(history)

    def render_summary(self, method: str, reports: Dict[str, EvalReport]):
        """Render headline metrics averaged over samples."""
        st.subheader(f"📊 {method} Reconstruction Summary" if method else "📊 Reconstruction Summary")

        col1, col2, col3, col4 = st.columns(4)
        with col1:
            st.metric("Samples", len(reports))
        with col2:
            st.metric("Mean PSNR", f"{np.mean([r.psnr_mean for r in reports.values()]):.2f} dB")
        with col3:
            ssim_values = [r.ssim_mean for r in reports.values() if np.isfinite(r.ssim_mean)]
            st.metric("Mean SSIM", f"{np.mean(ssim_values):.4f}" if ssim_values else "N/A")
        with col4:
            st.metric("Runtime", f"{sum(r.runtime_s for r in reports.values()):.2f} s")

    def render_frames(self, truth: np.ndarray, recon: np.ndarray, frame: int):
        """Render ground truth, reconstruction and absolute error side by side."""
        st.subheader("🎞️ Frames")
        panels = {
            "Ground truth": truth[..., frame],
            "Reconstruction": recon[..., frame],
            "Absolute error": np.abs(truth[..., frame] - recon[..., frame]),
        }
        for column, (title, image) in zip(st.columns(3), panels.items()):
            with column:
                self._render_image(title, image)

    def render_uncertainty(self, um: UncertaintyMap, frame: int):
        """Render the predicted variance and its binarized map."""
        st.subheader("🌡️ Uncertainty Map")
        col1, col2 = st.columns(2)
        with col1:
            self._render_image("σ² (predicted variance)", um.sigma2[..., frame])
        with col2:
            self._render_image("σ² above mean", um.binarized[..., frame].astype(float))
        st.caption(f"{um.binarized.mean():.1%} of pixels lie above the mean variance")

    def render_spectrum(self, truth: np.ndarray, recon: np.ndarray, frame: int):
        """Render radially averaged spectra of the truth and the reconstruction."""
        st.subheader("📈 Frequency Profile")
        df = self.spectrum_frame(truth, recon, frame)
        if PLOTLY_AVAILABLE:
            fig = px.line(df, x="radius", y=["truth", "reconstruction"], log_y=True,
                          labels={"value": "mean |DFT|", "radius": "radial frequency bin"})
            st.plotly_chart(fig, use_container_width=True)
        else:
            st.line_chart(df.set_index("radius"))

    def render_frame_table(self, report: EvalReport):
        """Render per-frame PSNR."""
        with st.expander("📋 Per-frame PSNR"):
            st.dataframe(self.frame_table(report), use_container_width=True)

    def render_history(self, history: List[Dict[str, float]]):
        """Render the GAP-TV iteration history."""
        with st.expander("🔁 Iteration History"):
            df = pd.DataFrame(history)
            columns = [c for c in ("psnr", "fidelity") if c in df]
            st.line_chart(df.set_index("iteration")[columns])

    def spectrum_frame(self, truth: np.ndarray, recon: np.ndarray, frame: int) -> pd.DataFrame:
        """Radial spectra of one frame as a DataFrame (radius, truth, reconstruction)."""
        truth_profile = spectrum_profile(truth[..., frame])
        recon_profile = spectrum_profile(recon[..., frame])
        return pd.DataFrame({
            "radius": truth_profile.radii,
            "truth": truth_profile.profile,
            "reconstruction": recon_profile.profile,
        })

    def frame_table(self, report: EvalReport) -> pd.DataFrame:
        return pd.DataFrame({
            "frame": np.arange(report.frames),
            "psnr_db": report.per_frame_psnr,
        })

    def _render_image(self, title: str, image: np.ndarray, zmax: Optional[float] = None):
        st.write(f"**{title}**")
        if PLOTLY_AVAILABLE:
            fig = go.Figure(go.Heatmap(z=image[::-1], colorscale="Gray", zmax=zmax, showscale=False))
            fig.update_layout(margin=dict(l=0, r=0, t=0, b=0), height=260)
            fig.update_xaxes(visible=False)
            fig.update_yaxes(visible=False, scaleanchor="x")
            st.plotly_chart(fig, use_container_width=True)
        else:
            low, high = float(image.min()), float(image.max())
            st.image((image - low) / (high - low) if high > low else np.zeros_like(image), clamp=True)
