"""Baseline CycleGAN vs SCGAN on the synthetic channel-swap task, three training seeds.

Protocol: 200 train / 50 test images per domain at 64 px, batch 8, 50 epochs, KID on
random-conv features (extractor seed 2021). The default networks are narrowed
(3 residual blocks, width 16) so all six runs fit in a few CPU hours; pass
``--n-res-blocks 9 --gen-width 64 --disc-width 64`` for full size. Every run checkpoints each epoch, so
re-running this script resumes where it stopped. Results are merged into a JSON file
after each finished run.

    python scripts/compare_ssl.py --work-dir runs/ssl_vs_baseline
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from scgan.data import DatasetSpec, SyntheticTask, UnpairedDataset, generate_synthetic
from scgan.metrics import FeatureExtractor, compare_images
from scgan.models import init_model
from scgan.trainer import TrainConfig, cycle_mae, fit, translate

PROTOCOL = {
    "task": "channel-swap",
    "n_train": 200,
    "n_test": 50,
    "image_size": 64,
    "batch_size": 8,
    "epochs": 50,
    "extractor": "random-conv",
    "extractor_seed": 2021,
    "kid_subset_size": 100,
    "kid_n_subsets": 10,
}
MODELS = {"baseline": False, "scgan": True}


def run_one(dataset: UnpairedDataset, data_root: Path, work: Path, seed: int, name: str, protocol: dict) -> dict:
    cfg = TrainConfig(
        data_root=str(data_root),
        checkpoint_dir=str(work / f"seed{seed}_{name}"),
        image_size=protocol["image_size"],
        epochs=protocol["epochs"],
        batch_size=protocol["batch_size"],
        ssl=MODELS[name],
        seed=seed,
        log_every=1,
        n_res_blocks=protocol.get("n_res_blocks", 9),
        gen_width=protocol.get("gen_width", 64),
        disc_width=protocol.get("disc_width", 64),
    )
    test_a, test_b = dataset.test_a, dataset.test_b
    init = init_model(cfg.image_size, cfg.seed, n_res_blocks=cfg.n_res_blocks,
                      gen_width=cfg.gen_width, disc_width=cfg.disc_width)
    mae_init = cycle_mae(init, test_a, test_b)
    t0 = time.time()
    state = fit(cfg, dataset=dataset)
    elapsed = time.time() - t0
    model = state.model.eval()
    extractor = FeatureExtractor("random-conv", protocol["extractor_seed"])
    kid_opts = dict(subset_size=protocol["kid_subset_size"], n_subsets=protocol["kid_n_subsets"],
                    seed=protocol["extractor_seed"])
    translated = compare_images(test_b, translate(model, test_a, "AtoB"), extractor, **kid_opts)
    return {
        "seed": seed,
        "model": cfg.model_name,
        "steps": state.global_step,
        "train_seconds_this_invocation": elapsed,
        "kid_translated_vs_real_b": translated.kid_mean,
        "kid_translated_vs_real_b_std": translated.kid_std,
        "fid_translated_vs_real_b": translated.fid,
        "cycle_mae_init": mae_init,
        "cycle_mae_final": cycle_mae(model, test_a, test_b),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work-dir", default="runs/ssl_vs_baseline")
    ap.add_argument("--results", default=str(Path(__file__).resolve().parents[1] / "results" / "ssl_vs_baseline.json"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=PROTOCOL["epochs"])
    ap.add_argument("--n-res-blocks", type=int, default=3)
    ap.add_argument("--gen-width", type=int, default=16)
    ap.add_argument("--disc-width", type=int, default=16)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    protocol = dict(PROTOCOL, epochs=args.epochs, data_seed=args.data_seed)
    protocol.update(n_res_blocks=args.n_res_blocks, gen_width=args.gen_width, disc_width=args.disc_width)
    work = Path(args.work_dir)
    data_root = work / "data"
    if not (data_root / "manifest.json").is_file():
        generate_synthetic(
            SyntheticTask(protocol["task"], protocol["n_train"], protocol["n_test"], protocol["image_size"], args.data_seed),
            data_root, overwrite=True,
        )
    dataset = UnpairedDataset(DatasetSpec(data_root, protocol["image_size"]))
    extractor = FeatureExtractor("random-conv", protocol["extractor_seed"])
    reference = compare_images(dataset.test_b, dataset.test_a, extractor,
                               subset_size=protocol["kid_subset_size"], n_subsets=protocol["kid_n_subsets"],
                               seed=protocol["extractor_seed"])

    results_path = Path(args.results)
    results_path.parent.mkdir(parents=True, exist_ok=True)
    results = {"protocol": protocol, "kid_real_a_vs_real_b": reference.kid_mean,
               "fid_real_a_vs_real_b": reference.fid, "runs": []}
    if results_path.is_file():
        previous = json.loads(results_path.read_text())
        if previous.get("protocol") == protocol:
            results["runs"] = previous.get("runs", [])
    done = {(r["seed"], r["model"]) for r in results["runs"]}
    for seed in args.seeds:
        for name in MODELS:
            model_name = "scgan" if MODELS[name] else "cyclegan-baseline"
            if (seed, model_name) in done:
                continue
            logging.info("training %s seed %d", name, seed)
            results["runs"].append(run_one(dataset, data_root, work, seed, name, protocol))
            results_path.write_text(json.dumps(results, indent=2))
    results_path.write_text(json.dumps(results, indent=2))
    print(json.dumps(results, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
