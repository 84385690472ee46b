"""
SCT Dataset Uploader Component for Streamlit
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import streamlit as st

from src.errors import SciError
from src.forward_model import Sample
from src.sct_io import dataset_from_records, sct_parse

logger = logging.getLogger(__name__)


class SctUploaderComponent:
    """Uploader for SCT dataset containers with validation and preview"""

    def __init__(self):
        self.supported_types = ['sct']
        self.max_file_size = 50  # MB

    def render(self) -> Optional[List[Sample]]:
        """
        Render the dataset upload interface

        Returns:
            Parsed samples or None
        """

        st.header("📁 Dataset Upload")

        with st.expander("ℹ️ Upload Guidelines", expanded=False):
            st.write("**Expected records per sample:**")
            for field in ("cube", "masks", "measurement", "noise_sigma", "mask_seed"):
                st.write(f"• `NNNN/{field}`")
            st.write(f"• Max file size: {self.max_file_size} MB")
            st.write("• Create one with `python sci_cli.py gen-data --out data.sct`")

        uploaded_file = st.file_uploader(
            "Select an SCT dataset",
            type=self.supported_types,
            help="Container written by `sci_cli.py gen-data`"
        )

        if uploaded_file is None:
            st.info("👆 Upload a dataset or generate a synthetic scene in the sidebar")
            return None

        samples, warnings = self.parse_upload(uploaded_file.name, uploaded_file.getvalue())
        for warning in warnings:
            st.warning(warning)

        if samples:
            st.success(f"✅ {len(samples)} sample(s) loaded from {uploaded_file.name}")
            self._render_preview(samples)
            return samples

        st.error("❌ No valid samples found. Please check the file.")
        return None

    def parse_upload(self, name: str, data: bytes) -> Tuple[Optional[List[Sample]], List[str]]:
        """
        Validate and parse an uploaded container

        Returns:
            Tuple of (samples or None, warnings)
        """

        warnings = []
        extension = Path(name).suffix.lower().lstrip('.')
        if extension not in self.supported_types:
            warnings.append(f"⚠️ {name} has unsupported file type (.{extension})")
            return None, warnings
        if len(data) > self.max_file_size * 1024 * 1024:
            warnings.append(f"⚠️ {name} exceeds size limit ({self.max_file_size}MB)")
            return None, warnings
        if not data:
            warnings.append(f"⚠️ {name} is empty")
            return None, warnings

        try:
            return dataset_from_records(sct_parse(data)), warnings
        except SciError as e:
            logger.warning("rejected upload %s: %s", name, e)
            warnings.append(f"⚠️ {name}: {e}")
            return None, warnings

    def _render_preview(self, samples: List[Sample]):
        """Render a summary of the uploaded samples"""

        stats = self.get_upload_stats(samples)
        col1, col2, col3 = st.columns(3)
        with col1:
            st.metric("Samples", stats['samples'])
        with col2:
            st.metric("Frame size", stats['frame_size'])
        with col3:
            st.metric("Frames (T)", stats['frames'])

        with st.expander("📄 Sample Details"):
            for sample in samples:
                st.write(
                    f"**{sample.scene}** · mask seed {sample.masks.seed} · "
                    f"noise σ {sample.measurement.noise_sigma:g} · "
                    f"mask density {sample.masks.values.mean():.2f}"
                )

    def get_upload_stats(self, samples: List[Sample]) -> Dict[str, Any]:
        """Get statistics about uploaded samples"""

        if not samples:
            return {}
        first = samples[0].cube
        return {
            'samples': len(samples),
            'frame_size': f"{first.height}×{first.width}",
            'frames': first.frames,
            'value_range': (float(min(s.cube.values.min() for s in samples)),
                            float(max(s.cube.values.max() for s in samples))),
            'mean_noise_sigma': float(np.mean([s.measurement.noise_sigma for s in samples])),
        }
