"""Published rates and margins (percent) for four models at n = 1611.

Rows are (table, model, metric, p_percent, margin_percent).
"""

from __future__ import annotations

N_ITEMS = 1611

_OVERALL = {
    "Gemini-1.5-Flash": {"answer_flip": (58.78, 1.23), "step_disruption": (79.08, 1.01), "hallucination": (30.60, 1.15)},
    "GPT-4o": {"answer_flip": (74.74, 1.08), "step_disruption": (92.86, 0.65), "hallucination": (35.51, 1.19)},
    "Qwen-2.5-VL-7B-Instruct": {"answer_flip": (85.72, 0.87), "step_disruption": (95.59, 0.51),
                                "hallucination": (26.57, 1.10)},
    "Llama-3.2-90B-Vision-Instruct": {"answer_flip": (75.72, 1.07), "step_disruption": (93.73, 0.60),
                                      "hallucination": (49.97, 1.25)},
}

_RANDOM = {
    "GPT-4o": {"hallucination": (33.27, 1.17), "step_disruption": (92.79, 0.64), "answer_flip": (58.03, 1.23)},
    "Gemini-1.5-Flash": {"hallucination": (52.64, 1.24), "step_disruption": (79.02, 1.01),
                         "answer_flip": (26.65, 1.12)},
    "Qwen-2.5-VL-7B-Instruct": {"hallucination": (29.74, 1.14), "step_disruption": (95.59, 0.51),
                                "answer_flip": (75.54, 1.07)},
    "Llama-3.2-90B-Vision-Instruct": {"hallucination": (41.59, 1.23), "step_disruption": (93.73, 0.60),
                                      "answer_flip": (55.37, 1.24)},
}

_SPECIFIC = {
    "GPT-4o": {"hallucination": (35.51, 1.18), "step_disruption": (92.86, 0.65), "answer_flip": (74.74, 1.08)},
    "Gemini-1.5-Flash": {"hallucination": (30.60, 1.15), "step_disruption": (79.08, 1.01),
                         "answer_flip": (58.78, 1.23)},
    "Qwen-2.5-VL-7B-Instruct": {"hallucination": (26.57, 1.10), "step_disruption": (95.59, 0.50),
                                "answer_flip": (85.72, 0.87)},
    "Llama-3.2-90B-Vision-Instruct": {"hallucination": (49.97, 1.25), "step_disruption": (93.73, 0.55),
                                      "answer_flip": (75.72, 1.07)},
}

TABLES = {"overall": _OVERALL, "random-masking": _RANDOM, "specific-masking": _SPECIFIC}

ROWS = [
    (table, model, metric, p, se)
    for table, models in TABLES.items()
    for model, metrics in models.items()
    for metric, (p, se) in metrics.items()
]
