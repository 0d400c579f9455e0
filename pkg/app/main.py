from __future__ import annotations

import json
from typing import List

import altair as alt
import pandas as pd
import streamlit as st  # type: ignore[import]

from src.data_models import AssociationKind, EvaluationResult, JointModelSpec, SubjectData
from src.dataset_io import events_to_dataframe, longitudinal_to_dataframe, read_dataset
from src.diagnostics import (
    DEFAULT_BINS,
    bands_to_dataframe,
    km_vpc_to_dataframe,
    npd_histogram,
    qq_to_dataframe,
    wormplot_to_dataframe,
)
from src.errors import JmnpdeError
from src.evaluation import DEFAULT_K, DEFAULT_SEED, evaluate_model
from src.model_core import base_model_spec
from src.pdf_report import generate_pdf_report
from src.simulator import default_design, simulate_dataset
from src.spec_io import spec_from_dict


def _render_decisions(result: EvaluationResult) -> None:
    report = result.report
    cols = st.columns(2)
    for col, decision in zip(cols, (report.global_decision, report.ks_decision)):
        min_p = decision.components[decision.driving_component]
        col.metric(
            label=f"{decision.name.upper()} test (threshold {decision.threshold:.4f})",
            value="reject" if decision.reject else "do not reject",
            delta=f"min p {min_p:.3g} via {decision.driving_component}",
            delta_color="inverse" if decision.reject else "normal",
        )

    tests_df = pd.DataFrame(
        [{"component": name, **test.to_dict()} for name, test in sorted(report.tests.items())]
    )
    with st.expander("Elementary tests"):
        st.dataframe(tests_df, use_container_width=True)

    if report.excluded:
        st.warning(f"{len(report.excluded)} observations had no surviving replicates and were left out of the tests.")
    if report.low_support:
        st.info(f"{report.low_support} observations rest on few surviving replicates.")


def _render_bands(result: EvaluationResult) -> None:
    st.write("**npd percentiles against their prediction intervals**")
    bands_df = bands_to_dataframe(result.bands)
    if bands_df.empty:
        st.info("No longitudinal residuals to bin.")
        return
    bands_df["percentile"] = bands_df["percentile"].map(lambda p: f"P{p:g}")
    area = (
        alt.Chart(bands_df)
        .mark_area(opacity=0.25)
        .encode(
            x=alt.X("bin_center", title="Time (days)"),
            y=alt.Y("lower", title="npd"),
            y2="upper",
            color=alt.Color("percentile", title="Percentile"),
        )
    )
    line = (
        alt.Chart(bands_df)
        .mark_line(point=True)
        .encode(
            x="bin_center",
            y="observed",
            color="percentile",
            tooltip=[
                alt.Tooltip("bin_center", title="Bin centre", format=".1f"),
                alt.Tooltip("bin_count", title="Observations"),
                alt.Tooltip("observed", title="Observed", format=".2f"),
                alt.Tooltip("lower", title="Lower", format=".2f"),
                alt.Tooltip("upper", title="Upper", format=".2f"),
            ],
        )
    )
    st.altair_chart((area + line).properties(height=300), use_container_width=True)


def _render_wormplot(result: EvaluationResult) -> None:
    st.write("**Detrended TTE pd (wormplot)**")
    worm_df = wormplot_to_dataframe(result.wormplot)
    if worm_df.empty:
        st.info("No TTE residuals.")
        return
    worm_df["record"] = worm_df["imputed"].map({0: "event", 1: "censored"})
    band = alt.Chart(worm_df).mark_area(opacity=0.2, color="grey").encode(x=alt.X("theoretical", title="Expected uniform quantile"), y="lower", y2="upper")
    points = (
        alt.Chart(worm_df)
        .mark_point(filled=True)
        .encode(
            x="theoretical",
            y=alt.Y("detrended", title="pd - expected"),
            color=alt.Color("record", title="Record"),
            tooltip=["id", alt.Tooltip("time", format=".1f"), alt.Tooltip("pd", format=".3f")],
        )
    )
    st.altair_chart((band + points).properties(height=300), use_container_width=True)


def _render_km_vpc(result: EvaluationResult) -> None:
    if result.km_vpc is None:
        return
    st.write("**Kaplan-Meier VPC**")
    vpc_df = km_vpc_to_dataframe(result.km_vpc)
    band = alt.Chart(vpc_df).mark_area(opacity=0.25).encode(
        x=alt.X("time", title="Time (days)"),
        y=alt.Y("lower", title="Survival", scale=alt.Scale(domain=[0, 1])),
        y2="upper",
    )
    observed = alt.Chart(vpc_df).mark_line(interpolate="step-after", color="black").encode(
        x="time",
        y="observed",
        tooltip=[alt.Tooltip("time", format=".1f"), alt.Tooltip("observed", format=".3f"), alt.Tooltip("median", format=".3f")],
    )
    st.altair_chart((band + observed).properties(height=300), use_container_width=True)


def _render_distribution(result: EvaluationResult) -> None:
    col_left, col_right = st.columns(2)
    with col_left:
        st.write("**npde histogram**")
        hist_df = npd_histogram(result.residuals.npde_values(), bins=15)
        bars = alt.Chart(hist_df).mark_bar(opacity=0.6).encode(x=alt.X("left", title="npde", bin="binned"), x2="right", y=alt.Y("count", title="Count"))
        expected = alt.Chart(hist_df).mark_tick(color="red", thickness=2).encode(x="left", y="expected")
        st.altair_chart(bars + expected, use_container_width=True)
    with col_right:
        st.write("**TTE npd QQ**")
        qq_df = qq_to_dataframe(result.qq_tte)
        st.altair_chart(
            alt.Chart(qq_df).mark_point().encode(x=alt.X("theoretical", title="N(0,1) quantile"), y=alt.Y("sample", title="npd")),
            use_container_width=True,
        )


def _spec_from_sidebar() -> JointModelSpec:
    uploaded_spec = st.sidebar.file_uploader("Tested model spec (JSON)", type=["json"])
    if uploaded_spec:
        return spec_from_dict(json.loads(uploaded_spec.getvalue().decode("utf-8")))
    association = st.sidebar.selectbox(
        "Association of the base model",
        options=list(AssociationKind),
        format_func=lambda kind: kind.label,
    )
    return base_model_spec(association=association)


def _load_subjects(spec: JointModelSpec, seed: int) -> List[SubjectData] | None:
    source = st.radio("Data source", ["Upload CSVs", "Simulate from the tested model"], horizontal=True)
    if source == "Upload CSVs":
        col_left, col_right = st.columns(2)
        longitudinal = col_left.file_uploader("Longitudinal CSV (id,time,value)", type=["csv"])
        events = col_right.file_uploader("Events CSV (id,time,event)", type=["csv"])
        if not (longitudinal and events):
            st.info("Upload both tables to begin the evaluation.")
            return None
        return read_dataset(longitudinal, events)
    n_subjects = st.number_input("Subjects", min_value=5, max_value=1000, value=100, step=5)
    return simulate_dataset(spec, default_design(int(n_subjects), study_end=spec.study_end), seed, study=1)


def run_app() -> None:
    st.set_page_config(page_title="jmnpde", layout="wide")
    st.title("Joint Model Evaluation with npde")
    st.caption("Rank PSA measurements and event times against replicates of a tested joint model and export a PDF summary.")

    k = int(st.sidebar.number_input("Replicates (K)", min_value=10, max_value=10000, value=DEFAULT_K, step=100))
    seed = int(st.sidebar.number_input("Master seed", min_value=0, value=DEFAULT_SEED, step=1))
    n_bins = int(st.sidebar.slider("Time bins", min_value=3, max_value=15, value=DEFAULT_BINS))

    try:
        spec = _spec_from_sidebar()
        subjects = _load_subjects(spec, seed)
        if subjects is None:
            return
        with st.spinner(f"Simulating {k} replicates per subject..."):
            result = evaluate_model(subjects, spec, k=k, seed=seed, n_bins=n_bins)
    except JmnpdeError as exc:
        st.error(str(exc))
        st.stop()

    n_events = sum(subject.event.observed for subject in subjects)
    st.success(f"Evaluated {spec.name} on {len(subjects)} subjects ({result.report.n_observations} observations, {n_events} events).")

    _render_decisions(result)
    st.subheader("Diagnostics")
    col_left, col_right = st.columns(2)
    with col_left:
        _render_bands(result)
    with col_right:
        _render_wormplot(result)
    _render_km_vpc(result)
    _render_distribution(result)

    st.subheader("Residuals")
    residual_df = result.residuals.to_dataframe()
    st.dataframe(residual_df, use_container_width=True)
    with st.expander("Dataset"):
        st.dataframe(longitudinal_to_dataframe(subjects), use_container_width=True)
        st.dataframe(events_to_dataframe(subjects), use_container_width=True)

    col_csv, col_json = st.columns(2)
    col_csv.download_button("Download residuals CSV", residual_df.to_csv(index=False), file_name="residuals.csv", mime="text/csv")
    col_json.download_button("Download report JSON", result.report.to_json(), file_name="report.json", mime="application/json")

    if "pdf_bytes" not in st.session_state:
        st.session_state["pdf_bytes"] = None

    if st.button("Generate PDF Report"):
        with st.spinner("Generating PDF report..."):
            st.session_state["pdf_bytes"] = generate_pdf_report(result).getvalue()

    if st.session_state.get("pdf_bytes"):
        st.download_button(
            label="Download Evaluation Report",
            data=st.session_state["pdf_bytes"],
            file_name=f"{spec.name}_evaluation.pdf",
            mime="application/pdf",
        )


if __name__ == "__main__":
    run_app()
