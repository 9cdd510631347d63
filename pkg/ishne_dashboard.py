# ishne_dashboard.py
# Streamlit browser for ISHNE run directories:  streamlit run ishne_dashboard.py

import logging
from datetime import datetime
from pathlib import Path

import pandas as pd
import streamlit as st
import yaml

from ishne.applog import setup_logging
from ishne.attention import attention_table
from ishne.checkpoint import check_compatible, load_checkpoint
from ishne.config import load_config
from ishne.dataio import homophily, load_graph
from ishne.errors import IshneError
from ishne.hetgraph import parse_schemas
from ishne.metrics import as_percent
from ishne.training import forward, prepare_inputs

logger = logging.getLogger("ishne")
CONFIG = load_config()
setup_logging()


def list_runs(root):
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p.parent for p in root.glob("**/manifest.yaml"))


def read_manifest(run):
    with open(run / "manifest.yaml", "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


@st.cache_resource(show_spinner=False)
def load_run_model(run, graph_path, metapaths):
    graph = load_graph(graph_path)
    schemas = parse_schemas(metapaths, graph)
    inputs = prepare_inputs(graph, schemas)
    model = load_checkpoint(Path(run) / "checkpoint.ckpt")
    check_compatible(model, inputs)
    return graph, inputs, model, forward(model, inputs)


# ---------------- Streamlit UI start ----------------
st.set_page_config(page_title=CONFIG["meta"]["app_name"] + " runs", layout="wide")
header_col, right_col = st.columns([6, 4])
with header_col:
    st.title(CONFIG["meta"]["app_name"] + " run browser")
    st.caption(f"Version {CONFIG['meta'].get('version', '')}")
with right_col:
    st.write(datetime.now().strftime("%Y-%m-%d %H:%M"))

st.sidebar.subheader("Runs")
runs_root = st.sidebar.text_input("Runs folder", value=str(Path(CONFIG["paths"]["out"]).parent))
runs = list_runs(runs_root)
if not runs:
    st.info(f"No run directories with a manifest.yaml under '{runs_root}'.")
    st.stop()
run = st.sidebar.selectbox("Run", runs, format_func=lambda p: str(p.relative_to(runs_root)))
manifest = read_manifest(run)
st.sidebar.markdown("---")
st.sidebar.write(f"seed {manifest.get('seed')} | best epoch {manifest.get('best_epoch')}")

tabs = st.tabs(["Summary", "Training curve", "Attention", "Files"])

# ----- Tab 1: Summary -----
with tabs[0]:
    st.header(str(run))
    metrics = manifest.get("metrics", {})
    cols = st.columns(max(1, 2 * len(metrics)))
    i = 0
    for part in ("val", "test"):
        if part in metrics:
            cols[i].metric(f"{part} Micro-F1", as_percent(metrics[part]["micro_f1"]) + "%")
            cols[i + 1].metric(f"{part} Macro-F1", as_percent(metrics[part]["macro_f1"]) + "%")
            i += 2
    st.markdown("### Meta-path weights")
    beta = manifest.get("beta", {})
    st.dataframe(pd.DataFrame({"metapath": list(beta), "beta": list(beta.values())}))
    if (run / "beta.png").exists():
        st.image(str(run / "beta.png"), width=480)
    st.markdown("### Configuration")
    st.json(manifest.get("train_config", {}))

# ----- Tab 2: Training curve -----
with tabs[1]:
    epochs_path = run / "epochs.tsv"
    if epochs_path.exists():
        frame = pd.read_csv(epochs_path, sep="\t")
        st.line_chart(frame.set_index("epoch")[["train_loss", "val_loss"]])
        st.line_chart(frame.set_index("epoch")[["val_microF1"]])
        st.dataframe(frame.tail(20))
    else:
        st.warning("epochs.tsv not found")

# ----- Tab 3: Attention -----
with tabs[2]:
    graph_path = manifest.get("dataset")
    if not graph_path or not Path(graph_path).exists():
        st.warning(f"Graph file '{graph_path}' is not available; attention cannot be recomputed.")
    else:
        try:
            graph, inputs, model, result = load_run_model(
                str(run), graph_path, ",".join(manifest.get("metapaths", []))
            )
            name = st.selectbox("Meta-path", model.names)
            emb = result.embeddings[model.names.index(name)]
            head = st.number_input("Head", min_value=0, max_value=model.config.heads - 1, value=0)
            table = attention_table(emb, inputs.node_ids, int(head))
            c1, c2 = st.columns(2)
            c1.metric("Neighbor pairs", len(table))
            c2.metric("Label homophily", f"{homophily(graph, inputs.neighborhoods[model.names.index(name)]):.3f}")
            node = st.selectbox("Target node", inputs.node_ids.tolist())
            st.dataframe(table[table["src"] == node].sort_values("weight", ascending=False))
        except IshneError as e:
            logger.exception("Attention view failed")
            st.error(f"{type(e).__name__}: {e}")

# ----- Tab 4: Files -----
with tabs[3]:
    for fname, mime in (
        ("report.pdf", "application/pdf"),
        ("checkpoint.ckpt", "text/plain"),
        ("epochs.tsv", "text/tab-separated-values"),
        ("manifest.yaml", "text/yaml"),
    ):
        path = run / fname
        if path.exists():
            st.download_button(f"Download {fname}", data=path.read_bytes(), file_name=fname, mime=mime)
