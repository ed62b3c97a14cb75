"""Human-readable explanations: prototype cards, per-instance reports, and
feature-importance summaries, exported as JSON plus dependency-free SVG."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TimeSeriesDataset
from .model import ProtoTSNet

__all__ = [
    "PrototypeCard",
    "ClassificationExplanation",
    "build_prototype_cards",
    "explain_instance",
    "export_report",
    "REPORT_SCHEMA",
]


@dataclass
class PrototypeCard:
    """Where a projected prototype lives in the training data."""

    proto_id: int
    class_id: int
    class_name: str
    source_series: int
    latent_offset: int
    input_segment: tuple[int, int]   # inclusive [t_s, t_e]
    waveform: np.ndarray             # [d, t_e - t_s + 1], sliced from the source
    class_weights: np.ndarray        # classifier column for this prototype, [C]


@dataclass
class ClassificationExplanation:
    """Which prototypes drove one prediction, strongest contribution first."""

    instance_id: int
    predicted_class: int
    predicted_name: str
    logits: np.ndarray
    top_matches: list[dict]  # proto_id, similarity, segment, contribution


def build_prototype_cards(model: ProtoTSNet, train: TimeSeriesDataset) -> list[PrototypeCard]:
    """One card per prototype; requires a projected model (proto_sources set)."""
    if model.proto_sources is None:
        raise ValueError("model has no proto_sources; run prototype projection first")
    cards = []
    for j in range(model.num_prototypes):
        si, offset = (int(v) for v in model.proto_sources[j])
        seg = model.prototype_input_segment(offset)
        cls = int(model.proto_classes[j])
        cards.append(PrototypeCard(
            proto_id=j,
            class_id=cls,
            class_name=train.class_names[cls],
            source_series=si,
            latent_offset=offset,
            input_segment=seg,
            waveform=train.x[si, :, seg[0]:seg[1] + 1].copy(),
            class_weights=model.classifier_weight.data[:, j].copy(),
        ))
    return cards


def explain_instance(
    model: ProtoTSNet, x: np.ndarray, instance_id: int = 0, top_k: int = 3
) -> ClassificationExplanation:
    """Decompose one prediction into per-prototype contributions.

    contribution[j] = similarity[j] * classifier_weight[predicted, j]; the sum
    over all prototypes reproduces the predicted logit exactly. Matches are
    sorted by contribution descending, ties by prototype id.
    """
    logits, sim, best_offset = model.forward(x)
    pred = int(logits.argmax())
    contrib = sim * model.classifier_weight.data[pred]
    order = sorted(range(model.num_prototypes), key=lambda j: (-contrib[j], j))
    matches = []
    for j in order[:top_k]:
        seg = model.prototype_input_segment(int(best_offset[j]))
        matches.append({
            "proto_id": j,
            "similarity": float(sim[j]),
            "segment": (int(seg[0]), int(seg[1])),
            "contribution": float(contrib[j]),
        })
    names = getattr(model, "class_names", None)
    return ClassificationExplanation(
        instance_id=instance_id,
        predicted_class=pred,
        predicted_name=names[pred] if names else str(pred),
        logits=logits,
        top_matches=matches,
    )


# ---------------------------------------------------------------------------
# report export
# ---------------------------------------------------------------------------

REPORT_SCHEMA = {
    "type": "object",
    "required": ["model", "prototypes", "instances"],
    "properties": {
        "model": {
            "type": "object",
            "required": ["config", "importance"],
            "properties": {
                "config": {"type": "object"},
                "importance": {"type": "array", "items": {"type": "number"}},
            },
        },
        "prototypes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["proto_id", "class_id", "class_name", "source_series",
                             "latent_offset", "input_segment", "waveform", "class_weights"],
                "properties": {
                    "proto_id": {"type": "integer"},
                    "class_id": {"type": "integer"},
                    "class_name": {"type": "string"},
                    "source_series": {"type": "integer"},
                    "latent_offset": {"type": "integer"},
                    "input_segment": {"type": "array", "items": {"type": "integer"},
                                      "minItems": 2, "maxItems": 2},
                    "waveform": {"type": "array",
                                 "items": {"type": "array", "items": {"type": "number"}}},
                    "class_weights": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "instances": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["instance_id", "predicted_class", "predicted_name",
                             "logits", "top_matches"],
                "properties": {
                    "instance_id": {"type": "integer"},
                    "predicted_class": {"type": "integer"},
                    "predicted_name": {"type": "string"},
                    "logits": {"type": "array", "items": {"type": "number"}},
                    "top_matches": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["proto_id", "similarity", "segment", "contribution"],
                        },
                    },
                },
            },
        },
    },
}


def _sig9(value) -> float:
    """Decimal with 9 significant digits, the report's stored precision."""
    return float(f"{float(value):.9g}")


def _jsonify(obj):
    if isinstance(obj, float):
        return _sig9(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.floating):
        return _sig9(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    return obj


def export_report(
    cards: list[PrototypeCard],
    explanations: list[ClassificationExplanation],
    importance: np.ndarray,
    out_dir,
    *,
    model_config: dict | None = None,
    series_for_cards: TimeSeriesDataset | None = None,
    series_for_instances: np.ndarray | None = None,
) -> Path:
    """Write report.json plus one SVG per card and per explained instance.

    Returns the report path. When the source series are provided, card SVGs
    plot the full series with the prototypical segment shaded; instance SVGs
    plot the instance with its best-matching segment shaded. An
    importance.svg bar chart (bars in descending importance order) is always
    written.
    """
    if not cards or not explanations:
        raise ValueError("export_report needs at least one card and one explanation")
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)

    report = {
        "model": {
            "config": _jsonify(model_config or {}),
            "importance": _jsonify(np.asarray(importance)),
        },
        "prototypes": [
            _jsonify({
                "proto_id": c.proto_id,
                "class_id": c.class_id,
                "class_name": c.class_name,
                "source_series": c.source_series,
                "latent_offset": c.latent_offset,
                "input_segment": list(c.input_segment),
                "waveform": c.waveform,
                "class_weights": c.class_weights,
            })
            for c in cards
        ],
        "instances": [
            _jsonify({
                "instance_id": e.instance_id,
                "predicted_class": e.predicted_class,
                "predicted_name": e.predicted_name,
                "logits": e.logits,
                "top_matches": e.top_matches,
            })
            for e in explanations
        ],
    }
    report_path = out / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)

    for c in cards:
        if series_for_cards is not None:
            series = series_for_cards.x[c.source_series]
            segment = c.input_segment
        else:
            series, segment = c.waveform, None
        svg = _series_svg(series, segment, title=f"prototype {c.proto_id} ({c.class_name})")
        (out / f"proto_{c.proto_id}.svg").write_text(svg, encoding="utf-8")

    for i, e in enumerate(explanations):
        if series_for_instances is not None:
            series = series_for_instances[i]
            segment = e.top_matches[0]["segment"] if e.top_matches else None
        else:
            continue
        svg = _series_svg(series, segment,
                          title=f"instance {e.instance_id} -> {e.predicted_name}")
        (out / f"instance_{e.instance_id}.svg").write_text(svg, encoding="utf-8")

    (out / "importance.svg").write_text(
        _importance_svg(np.asarray(importance, dtype=np.float64)), encoding="utf-8")
    return report_path


# ---------------------------------------------------------------------------
# SVG rendering (no dependencies, one polyline per feature)
# ---------------------------------------------------------------------------

_W, _ROW_H, _MARGIN = 640, 80, 12


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _series_svg(series: np.ndarray, segment: tuple[int, int] | None, title: str = "") -> str:
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    d, t_len = series.shape
    height = _MARGIN * 2 + _ROW_H * d + 16
    plot_w = _W - 2 * _MARGIN

    def x_px(t):
        return _MARGIN + plot_w * (t / max(1, t_len - 1))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}">',
        f'<title>{_escape(title)}</title>',
    ]
    if segment is not None:
        x0, x1 = x_px(segment[0]), x_px(segment[1])
        parts.append(
            f'<rect class="segment" x="{x0:.2f}" y="{_MARGIN}" width="{x1 - x0:.2f}" '
            f'height="{_ROW_H * d}" fill="#aaccee" fill-opacity="0.5"/>'
        )
    for j in range(d):
        top = _MARGIN + j * _ROW_H
        lo, hi = series[j].min(), series[j].max()
        span = hi - lo if hi > lo else 1.0
        pts = " ".join(
            f"{x_px(t):.2f},{top + (_ROW_H - 8) * (1.0 - (v - lo) / span) + 4:.2f}"
            for t, v in enumerate(series[j])
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#28527a" stroke-width="1"/>')
        parts.append(f'<text x="{_MARGIN}" y="{top + 12}" font-size="10">f{j}</text>')
    parts.append(f'<text x="{_MARGIN}" y="{height - 4}" font-size="11">{_escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _importance_svg(importance: np.ndarray) -> str:
    order = sorted(range(importance.size), key=lambda m: (-importance[m], m))
    height = 180
    bar_w = max(12, min(60, (_W - 2 * _MARGIN) // max(1, importance.size) - 8))
    peak = importance.max() if importance.size and importance.max() > 0 else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}">',
        "<title>feature importance</title>",
    ]
    for pos, m in enumerate(order):
        h = 120.0 * importance[m] / peak
        x = _MARGIN + pos * (bar_w + 8)
        parts.append(
            f'<rect class="bar" data-feature="{m}" x="{x}" y="{140 - h:.2f}" '
            f'width="{bar_w}" height="{h:.2f}" fill="#28527a"/>'
        )
        parts.append(f'<text x="{x}" y="156" font-size="10">f{m}</text>')
        parts.append(f'<text x="{x}" y="170" font-size="9">{importance[m]:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
