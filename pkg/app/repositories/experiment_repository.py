import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from app.config import ExperimentConfig, Mode, render_config
from app.models.experiment import DatasetManifest, DomainModel, DomainPair, ModelManifest, StitchReport, TrainLogRow
from app.repositories.csv_repository import csv_repository
from app.repositories.storage import atomic_write, read_text
from app.repositories.weights_repository import weights_repository
from app.services.topology import death_time_histogram, death_time_summary

logger = logging.getLogger(__name__)

REPORT_HEADER = ["mode", "gamma_domain", "phi_domain", "acc_mean", "acc_std", "f1_mean", "f1_std", "mae_mean", "mae_std"]
HISTOGRAM_HEADER = ["class", "bin_left", "bin_right", "count"]
SUMMARY_HEADER = ["class", "count", "mean", "std", "min", "max", "loss"]
TRAIN_LOG_HEADER = list(TrainLogRow.model_fields)


def histogram_rows(deaths_by_class: Dict[int, np.ndarray], bins: int, value_range: Tuple[float, float]) -> List[list]:
    rows = []
    for label in sorted(deaths_by_class):
        counts, edges = death_time_histogram(deaths_by_class[label], bins, value_range)
        rows += [[label, float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins)]
    return rows


def shared_range(groups: Iterable[np.ndarray]) -> Tuple[float, float]:
    top = max((float(np.max(g)) for g in groups if g.size), default=0.0)
    return 0.0, top if top > 0 else 1.0


class ExperimentRepository:
    """Directory layouts of generated datasets, trained models and experiment outputs."""

    def save_domain_pair(self, out_dir: Path, pair: DomainPair, seed: int) -> DatasetManifest:
        out_dir = Path(out_dir)
        manifest = DatasetManifest.from_pair(pair, seed)
        csv_repository.write_dataset(out_dir / "domain_a.csv", pair.inputs_a, pair.labels)
        csv_repository.write_dataset(out_dir / "domain_b.csv", pair.inputs_b, pair.labels)
        atomic_write(out_dir / "manifest.json", manifest.model_dump_json(indent=2) + "\n")
        logger.info(f"Wrote {manifest.kind.value} domain pair to {out_dir}")
        return manifest

    def load_manifest(self, path: Path) -> DatasetManifest:
        return DatasetManifest.model_validate_json(read_text(path))

    def save_model(self, directory: Path, name: str, model: DomainModel) -> None:
        directory = Path(directory)
        weights_repository.save(directory / f"{name}.mlpw", model.weights)
        if model.anchors is not None:
            csv_repository.write_anchors(directory / f"{name}_anchors.csv", model.anchors)
        manifest = ModelManifest(mode=model.mode, anchor_ids=model.anchor_ids)
        atomic_write(directory / f"{name}.json", manifest.model_dump_json(indent=2) + "\n")

    def load_model(self, directory: Path, name: str) -> DomainModel:
        directory = Path(directory)
        manifest = ModelManifest.model_validate_json(read_text(directory / f"{name}.json"))
        anchors = None
        if manifest.mode is not Mode.ABSOLUTE:
            anchors = csv_repository.read_anchors(directory / f"{name}_anchors.csv")
        weights = weights_repository.load(directory / f"{name}.mlpw")
        return DomainModel(weights=weights, mode=manifest.mode, anchor_ids=manifest.anchor_ids, anchors=anchors)

    def write_report(self, path: Path, report: StitchReport) -> Path:
        rows = [
            [c.mode.value, c.gamma_domain, c.phi_domain, c.acc_mean, c.acc_std, c.f1_mean, c.f1_std, c.mae_mean, c.mae_std]
            for c in report.cells
        ]
        return csv_repository.write_rows(path, REPORT_HEADER, rows)

    def write_train_log(self, path: Path, log: Sequence[TrainLogRow]) -> Path:
        return csv_repository.write_rows(path, TRAIN_LOG_HEADER, ([getattr(r, k) for k in TRAIN_LOG_HEADER] for r in log))

    def write_histograms(self, path: Path, groups: Dict[Tuple[str, str], Dict[int, np.ndarray]], bins: int) -> Path:
        """One histogram per (mode, domain, class), all sharing the bin edges of the file."""
        value_range = shared_range(d for by_class in groups.values() for d in by_class.values())
        rows = []
        for (mode, domain), by_class in groups.items():
            rows += [[mode, domain, *row] for row in histogram_rows(by_class, bins, value_range)]
        return csv_repository.write_rows(path, ["mode", "domain", *HISTOGRAM_HEADER], rows)

    def write_topology_analysis(
            self,
            out_dir: Path,
            deaths_by_class: Dict[int, np.ndarray],
            losses: Dict[int, float],
            bins: int
    ) -> None:
        out_dir = Path(out_dir)
        value_range = shared_range(deaths_by_class.values())
        csv_repository.write_rows(out_dir / "histogram.csv", HISTOGRAM_HEADER, histogram_rows(deaths_by_class, bins, value_range))
        summary = []
        for label in sorted(deaths_by_class):
            stats = death_time_summary(deaths_by_class[label])
            summary.append([label, deaths_by_class[label].size, stats["mean"], stats["std"], stats["min"], stats["max"], losses[label]])
        csv_repository.write_rows(out_dir / "summary.csv", SUMMARY_HEADER, summary)

    def write_resolved_config(self, path: Path, config: ExperimentConfig) -> Path:
        return atomic_write(path, render_config(config))

    def save_experiment(self, out_dir: Path, config: ExperimentConfig, report: StitchReport, outcomes_by_mode: Dict) -> None:
        out_dir = Path(out_dir)
        self.write_resolved_config(out_dir / "resolved_config.txt", config)
        self.write_report(out_dir / "report.csv", report)

        pre: Dict[Tuple[str, str], Dict[int, np.ndarray]] = {}
        post: Dict[Tuple[str, str], Dict[int, np.ndarray]] = {}
        for mode, outcomes in outcomes_by_mode.items():
            mode_dir = out_dir / mode.value
            for outcome in outcomes:
                for domain, model in outcome.models.items():
                    self.save_model(mode_dir, f"model_{domain}_{outcome.seed}", model)
                    self.write_train_log(mode_dir / f"train_log_{domain}_{outcome.seed}.csv", outcome.logs[domain])
            for domain in ("a", "b"):
                pre[(mode.value, domain)] = _merge(o.deaths_pre[domain] for o in outcomes)
                post[(mode.value, domain)] = _merge(o.deaths_post[domain] for o in outcomes)
        self.write_histograms(out_dir / "deaths_pre.csv", pre, config.stitch.histogram_bins)
        self.write_histograms(out_dir / "deaths_post.csv", post, config.stitch.histogram_bins)
        logger.info(f"Experiment outputs written to {out_dir}")


def _merge(groups: Iterable[Dict[int, np.ndarray]]) -> Dict[int, np.ndarray]:
    merged: Dict[int, List[np.ndarray]] = {}
    for by_class in groups:
        for label, deaths in by_class.items():
            merged.setdefault(label, []).append(deaths)
    return {label: np.concatenate(parts) for label, parts in merged.items()}


experiment_repository = ExperimentRepository()
