"""Small run configs shared by the runio and acceptance tests."""
from pathlib import Path

from conradlab.runio import parse_config, run_experiment

SMALL_SENTENCE = """\
env.feature_dim=6
env.num_findings=5
env.max_sentences=3
policy.hidden_dim=8
policy.scenario=SentenceLevel
grpo.num_studies=60
grpo.probe_every=30
grpo.num_probe_studies=20
eval.num_eval_studies=40
"""

SMALL_REPORT = SMALL_SENTENCE.replace("SentenceLevel", "ReportLevel") + """\
eval.num_probe_train=40
eval.self_consistency_k=2
eval.num_clinical_reports=10
"""


def run_pipeline(text, out, commands=("train", "eval", "filter")):
    """Run ``commands`` in order into ``out``; returns {filename: bytes} for every CSV."""
    cfg = parse_config(text)
    for cmd in commands:
        run_experiment(cfg, cmd, out_dir=out)
    return {p.name: p.read_bytes() for p in sorted(Path(out).glob("*.csv"))}
