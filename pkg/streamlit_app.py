"""
Snapshot Video Reconstruction - Main Streamlit Application
Entry point for the interactive compressive-imaging dashboard
"""

import logging
import time
from datetime import datetime

import numpy as np
import streamlit as st

from src.benchmark import model_op_counts
from src.forward_model import MASK_KINDS, SCENE_KINDS, make_scene, simulate
from src.gap_solver import gap_tv_reconstruct
from src.metrics import evaluate
from src.sct_io import load_checkpoint, sidecar_path

# Import UI components
from components.file_uploader import SctUploaderComponent
from components.reconstruction_display import ReconstructionDisplayComponent
from components.bench_dashboard import BenchDashboardComponent
from components.report_generator import ReportGeneratorComponent

# Import configuration
from config.settings import AppSettings, GapTvConfig, configure_logging

logger = logging.getLogger(__name__)

# Page configuration
st.set_page_config(
    page_title="Snapshot Video Reconstruction",
    page_icon="🎞️",
    layout="wide",
    initial_sidebar_state="expanded"
)


def initialize_session_state():
    """Initialize Streamlit session state variables"""
    if 'samples' not in st.session_state:
        st.session_state.samples = None
    if 'reconstruction_results' not in st.session_state:
        st.session_state.reconstruction_results = None
    if 'bench_results' not in st.session_state:
        st.session_state.bench_results = None
    if 'usage_stats' not in st.session_state:
        st.session_state.usage_stats = {
            'reconstructions': 0,
            'reports_generated': 0,
            'frames_reconstructed': 0,
        }
    if 'app_settings' not in st.session_state:
        settings = AppSettings()
        configure_logging(settings.LOG_LEVEL)
        settings.apply()
        st.session_state.app_settings = settings


def get_app_components():
    """Initialize application components"""
    return {
        'uploader': SctUploaderComponent(),
        'display': ReconstructionDisplayComponent(),
        'bench': BenchDashboardComponent(),
        'report_generator': ReportGeneratorComponent(),
    }


def render_scene_generator():
    """Sidebar controls for a synthetic scene"""
    st.subheader("🧪 Synthetic Scene")
    scene = st.selectbox("Scene", SCENE_KINDS, index=1)
    col1, col2, col3 = st.columns(3)
    with col1:
        width = st.number_input("W", min_value=4, max_value=128, value=16, step=4)
    with col2:
        height = st.number_input("H", min_value=4, max_value=128, value=16, step=4)
    with col3:
        frames = st.number_input("T", min_value=1, max_value=16, value=4)
    mask_kind = st.selectbox("Mask kind", MASK_KINDS)
    noise = st.number_input("Noise σ", min_value=0.0, max_value=0.5, value=0.0, step=0.01)
    seed = st.number_input("Seed", min_value=0, value=int(st.session_state.app_settings.DEFAULT_SEED))

    if st.button("🎲 Generate"):
        try:
            cube = make_scene(scene, int(width), int(height), int(frames), int(seed))
            sample = simulate(cube, mask_kind, int(seed) + 1, float(noise), int(seed) + 2, scene=scene)
        except Exception as e:
            st.error(f"❌ Could not generate scene: {str(e)}")
            return
        st.session_state.samples = [sample]
        st.session_state.reconstruction_results = None
        st.success(f"✅ {scene} {width}×{height}×{frames} simulated")


def main():
    """Main application function"""

    initialize_session_state()
    components = get_app_components()

    st.title("🎞️ Snapshot Video Reconstruction")
    st.markdown("**Recover video frames from a single coded-aperture snapshot**")

    with st.sidebar:
        render_scene_generator()
        st.divider()
        components['bench'].render_sidebar()

    recon_tab, bench_tab = st.tabs(["🔍 Reconstruction", "⏱️ Attention Benchmark"])

    with recon_tab:
        col1, col2 = st.columns([1, 2])

        with col1:
            uploaded = components['uploader'].render()
            if uploaded:
                st.session_state.samples = uploaded

            samples = st.session_state.samples
            if samples:
                method = st.radio(
                    "Reconstruction Method",
                    ["GAP-TV", "Trained checkpoint"],
                    help="Classical iterative baseline or a trained unfolding network"
                )
                options = render_method_options(method)
                if st.button("🔍 Reconstruct", type="primary"):
                    run_reconstruction(samples, method, options)

        with col2:
            results = st.session_state.reconstruction_results
            if results:
                components['display'].render(results)
                components['report_generator'].render(results)
            else:
                st.info("Load a dataset or generate a scene, then click 'Reconstruct'")

    with bench_tab:
        components['bench'].render()


def render_method_options(method: str) -> dict:
    """Controls specific to the chosen reconstruction method"""
    if method == "GAP-TV":
        with st.expander("⚙️ GAP-TV Options", expanded=True):
            defaults = GapTvConfig()
            return {
                'outer_iters': st.slider("Outer iterations", 1, 200, defaults.outer_iters),
                'tv_iters': st.slider("TV iterations", 1, 50, defaults.tv_iters),
                'tv_weight': st.number_input("TV weight λ", min_value=1e-4, value=defaults.tv_weight, format="%.4f"),
                'accelerate': st.checkbox("Accelerated update", value=defaults.accelerate),
            }

    checkpoint_dir = st.session_state.app_settings.CHECKPOINT_DIR
    available = sorted(p for p in checkpoint_dir.glob("*.sct") if sidecar_path(p).exists())
    if not available:
        st.warning(f"⚠️ No checkpoints in {checkpoint_dir}. Train one with `python sci_cli.py train`.")
        return {'checkpoint': None}
    checkpoint = st.selectbox("Checkpoint", available, format_func=lambda p: p.name)
    return {'checkpoint': checkpoint}


def run_reconstruction(samples, method, options):
    """Reconstruct every sample and store the results in session state"""

    progress_bar = st.progress(0)
    status_text = st.empty()

    try:
        model = None
        if method == "GAP-TV":
            cfg = GapTvConfig(**options).validate()
        else:
            if options.get('checkpoint') is None:
                st.error("❌ Select a checkpoint first")
                return
            status_text.text("📦 Loading checkpoint...")
            model, _, _ = load_checkpoint(options['checkpoint'])

        recons, reports, uncertainty, history = {}, {}, {}, {}
        for i, sample in enumerate(samples):
            status_text.text(f"🔄 Reconstructing {sample.scene} ({i + 1}/{len(samples)})...")
            ops = {}
            if model is None:
                result = gap_tv_reconstruct(sample.measurement, sample.masks, cfg, truth=sample.cube)
                recon, runtime = result.cube.values, result.runtime_s
                history[sample.scene] = result.history
            else:
                start = time.perf_counter()
                recon = model.reconstruct(sample.measurement, sample.masks)
                runtime = time.perf_counter() - start
                um = model.uncertainty_map(sample.measurement, sample.masks)
                if um is not None:
                    uncertainty[sample.scene] = um
                ops = model_op_counts(model.cfg, sample.cube.width, sample.cube.height, sample.cube.frames)
            recons[sample.scene] = recon
            reports[sample.scene] = evaluate(recon, sample.cube.values, runtime, ops)
            progress_bar.progress(int(100 * (i + 1) / len(samples)))

        st.session_state.reconstruction_results = {
            'method': method,
            'parameters': options,
            'samples': samples,
            'recons': recons,
            'reports': reports,
            'uncertainty': uncertainty,
            'history': history,
            'timestamp': datetime.now().isoformat(),
        }
        st.session_state.usage_stats['reconstructions'] += 1
        st.session_state.usage_stats['frames_reconstructed'] += sum(r.frames for r in reports.values())

        progress_bar.empty()
        status_text.empty()
        st.success(f"✅ Mean PSNR {np.mean([r.psnr_mean for r in reports.values()]):.2f} dB")

    except Exception as e:
        logger.exception("reconstruction failed")
        progress_bar.empty()
        status_text.empty()
        st.error(f"❌ Reconstruction failed: {str(e)}")


if __name__ == "__main__":
    main()
