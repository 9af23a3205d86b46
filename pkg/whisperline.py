#!/usr/bin/env python3
"""
whisperline - 耳语/正常语音分类工具 (QSE 特征 + 1D-CNN)

子命令: synth, extract, train, eval, noise, inspect, preset
退出码: 0 成功, 1 用法/配置错误, 2 数据/格式错误
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from audio_io import (
    Manifest,
    ManifestEntry,
    add_white_noise,
    load_manifest,
    measure_snr,
    read_labeled,
    utterance_seed,
    write_manifest,
    write_wav,
)
from config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROPOUT,
    DEFAULT_LR,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_SEED,
    DEFAULT_VAL_FRACTION,
    SUPPORTED_RATES,
)
from dsp_features import QUARTERS, FeatureConfig, save_norm_stats
from errors import UsageError, WhisperlineError
from logger_config import setup_logger
from models import ARCHITECTURES, describe, load_checkpoint, save_checkpoint
from pipeline import (
    TrainConfig,
    evaluate,
    extract_corpus,
    fit_features,
    load_feature_dir,
    load_presets,
    preset_group,
    run_preset,
    run_table,
    save_feature_dir,
    snr_audit,
    write_training_log,
)
from synth import SynthConfig, generate_corpus

logger = setup_logger(__name__)

# 5.2 s at 16 kHz, 1024-sample frames, hop 128
DEFAULT_INSPECT_FRAMES = 643

EPILOG = """
使用示例:
  # 生成合成语料 (每类 200 条)
  python whisperline.py synth --out data/synth --n 200 --seed 7

  # 提取 Q1 QSE 特征
  python whisperline.py extract --manifest data/synth/manifest.csv --feature qse --quarter q1 --out feats/q1

  # 训练 arch4 并评估
  python whisperline.py train --features feats/q1 --arch arch4 --seed 7 --out models/arch4.ckpt
  python whisperline.py eval --ckpt models/arch4.ckpt --features feats/q1 --report reports/arch4.csv

  # 查看模型结构、参数量和 FLOPs
  python whisperline.py inspect --ckpt models/arch4.ckpt

  # 运行预设实验 (单个预设或整张表)
  python whisperline.py preset --name table5 --manifest data/synth/manifest.csv --out runs/table5
"""


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class HelpFormatter(argparse.RawDescriptionHelpFormatter, argparse.ArgumentDefaultsHelpFormatter):
    pass


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("WHISPERLINE_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"WHISPERLINE_SEED must be an integer, got {env!r}")


def _check_output(path: Path, force: bool) -> None:
    """Refuse to overwrite an existing file or non-empty directory unless --force."""
    if force or not path.exists():
        return
    if path.is_dir() and not any(path.iterdir()):
        return
    raise UsageError(f"{path} already exists; pass --force to overwrite")


def _check_input(path: Path) -> None:
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def synth_command(args) -> int:
    cfg = SynthConfig(n_per_class=args.n, duration_s=args.duration, sample_rate=args.rate,
                      seed=_resolve_seed(args.seed))
    out = Path(args.out)
    _check_output(out, args.force)
    manifest = generate_corpus(cfg, out, jobs=args.jobs)
    logger.info(f"✅ 已生成 {len(manifest)} 条语音: {out}")
    return 0


def _feature_config(args) -> FeatureConfig:
    kind = args.quarter if args.feature == "qse" else args.feature
    return FeatureConfig(kind=kind, sample_rate=args.rate)


def extract_command(args) -> int:
    feature_cfg = _feature_config(args)
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    _check_input(Path(args.manifest))
    _check_output(out, args.force)

    manifest = load_manifest(args.manifest)
    utterances = extract_corpus(manifest, feature_cfg, args.snr, seed, args.jobs)
    extra = {"manifest": str(Path(args.manifest)), "seed": seed, "snr_db": args.snr}
    if args.snr is not None:
        extra["snr_audit"] = snr_audit(utterances, args.snr)
    save_feature_dir(utterances, feature_cfg, out, extra)
    logger.info(f"✅ 特征提取完成: {feature_cfg.kind}, {len(utterances)} 条 -> {out}")
    return 0


def train_command(args) -> int:
    train_cfg = TrainConfig(
        batch_size=args.batch,
        max_epochs=args.epochs,
        lr=args.lr,
        dropout=args.dropout,
        val_fraction=args.val_fraction,
        patience=args.patience,
        seed=_resolve_seed(args.seed),
        frame_step=args.frame_step,
        energy_filter=args.energy_filter,
    )
    out = Path(args.out)
    _check_input(Path(args.features))
    _check_output(out, args.force)

    utterances, feature_cfg, _ = load_feature_dir(args.features)
    result = fit_features(utterances, feature_cfg, args.arch, train_cfg)
    save_checkpoint(result.checkpoint, out)
    save_norm_stats(result.checkpoint.norm_stats, out.with_suffix(".norm.json"))
    write_training_log(result.log, out.with_suffix(".log.csv"))
    logger.info(f"✅ 训练完成: 最佳 epoch {result.best_epoch}/{len(result.log)} -> {out}")
    return 0


def eval_command(args) -> int:
    report_path = Path(args.report)
    _check_input(Path(args.ckpt))
    _check_input(Path(args.features))
    _check_output(report_path, args.force)

    ckpt = load_checkpoint(args.ckpt)
    utterances, feature_cfg, _ = load_feature_dir(args.features)
    trained_kind = ckpt.metadata.get("feature", {}).get("kind")
    if trained_kind and trained_kind != feature_cfg.kind:
        raise UsageError(f"checkpoint was trained on {trained_kind} features, directory holds {feature_cfg.kind}")

    selected = [u for u in utterances if u.split == args.split]
    report, _ = evaluate(ckpt, selected)
    report.write(report_path)
    print(report.to_csv(), end="")
    return 0


def noise_command(args) -> int:
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    _check_input(Path(args.manifest))
    _check_output(out, args.force)

    manifest = load_manifest(args.manifest)

    def _one(entry: ManifestEntry):
        clip = read_labeled(entry)
        noisy = add_white_noise(clip, args.snr, utterance_seed(seed, entry.utterance_id))
        path = write_wav(noisy, out / "wav" / f"{entry.utterance_id}.wav")
        return ManifestEntry(entry.utterance_id, path, entry.label, entry.split), measure_snr(clip, noisy)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_one, manifest.entries))
    else:
        results = [_one(e) for e in manifest.entries]

    write_manifest(Manifest([entry for entry, _ in results]), out / "manifest.csv")
    measured = [snr for _, snr in results]
    audit = {"snr_db": args.snr, "seed": seed, "n_utterances": len(measured),
             "measured_min_db": min(measured), "measured_max_db": max(measured)}
    with open(out / "noise.json", "w", encoding="utf-8") as f:
        json.dump(audit, f, indent=2, sort_keys=True)
    logger.info(f"SNR audit: requested {args.snr:.2f} dB, measured [{audit['measured_min_db']:.4f}, "
                f"{audit['measured_max_db']:.4f}] dB")
    logger.info(f"✅ 加噪完成: {len(results)} 条 -> {out}")
    return 0


def inspect_command(args) -> int:
    _check_input(Path(args.ckpt))
    ckpt = load_checkpoint(args.ckpt)
    print(describe(ckpt.spec, n_frames=args.frames))
    if ckpt.metadata:
        print("metadata: " + json.dumps(ckpt.metadata, sort_keys=True))
    return 0


def preset_command(args) -> int:
    presets = load_presets()
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    if args.name not in presets:
        preset_group(args.name, presets)
    _check_input(Path(args.manifest))
    _check_output(out, args.force)

    manifest = load_manifest(args.manifest)
    overrides = {"max_epochs": args.epochs} if args.epochs is not None else None
    if args.name in presets:
        report = run_preset(presets[args.name], manifest, out, seed, args.jobs, overrides)
        print(report.to_csv(), end="")
    else:
        reports = run_table(args.name, manifest, out, seed, args.jobs, presets, overrides)
        for name, report in reports.items():
            print(f"{name},{report.accuracy:.2f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="whisperline",
        description="耳语/正常语音分类工具 - QSE 特征 + 1D-CNN",
        formatter_class=HelpFormatter,
        epilog=EPILOG,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    def _sub(name, help_text):
        return subparsers.add_parser(name, help=help_text, description=help_text, formatter_class=HelpFormatter)

    def _seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="随机种子 (未指定时读取环境变量 WHISPERLINE_SEED)")

    def _force(p):
        p.add_argument("--force", action="store_true", help="覆盖已存在的输出")

    def _jobs(p):
        p.add_argument("--jobs", type=int, default=1, help="并行线程数")

    # 合成语料
    p = _sub("synth", "生成合成的正常/耳语平行语料")
    p.add_argument("--out", required=True, help="输出目录")
    p.add_argument("--n", type=int, required=True, help="每类语音条数")
    p.add_argument("--duration", type=float, default=5.2, help="每条语音时长 (秒)")
    p.add_argument("--rate", type=int, choices=SUPPORTED_RATES, default=DEFAULT_SAMPLE_RATE, help="采样率")
    _seed(p)
    _jobs(p)
    _force(p)
    p.set_defaults(func=synth_command)

    # 特征提取
    p = _sub("extract", "从清单提取逐帧特征")
    p.add_argument("--manifest", required=True, help="清单 CSV")
    p.add_argument("--feature", choices=["qse", "mfcc", "lfbe"], required=True, help="特征类型")
    p.add_argument("--quarter", choices=list(QUARTERS), default="q1", help="QSE 频段")
    p.add_argument("--rate", type=int, choices=SUPPORTED_RATES, default=DEFAULT_SAMPLE_RATE, help="特征采样率")
    p.add_argument("--snr", type=float, default=None, help="加入白噪声的信噪比 (dB)")
    p.add_argument("--out", required=True, help="特征输出目录")
    _seed(p)
    _jobs(p)
    _force(p)
    p.set_defaults(func=extract_command)

    # 训练
    p = _sub("train", "在特征目录上训练模型")
    p.add_argument("--features", required=True, help="特征目录")
    p.add_argument("--arch", choices=list(ARCHITECTURES), required=True, help="网络结构")
    p.add_argument("--out", required=True, help="检查点输出路径")
    p.add_argument("--lr", type=float, default=DEFAULT_LR, help="学习率")
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH_SIZE, help="批大小")
    p.add_argument("--epochs", type=int, default=DEFAULT_MAX_EPOCHS, help="最大 epoch 数")
    p.add_argument("--dropout", type=float, default=DEFAULT_DROPOUT, help="dropout 比例")
    p.add_argument("--patience", type=int, default=DEFAULT_PATIENCE, help="早停耐心 (epoch)")
    p.add_argument("--val-fraction", type=float, default=DEFAULT_VAL_FRACTION, help="验证集比例 (按语音划分)")
    p.add_argument("--frame-step", type=int, default=1, help="每隔 N 帧取一帧训练")
    p.add_argument("--energy-filter", action="store_true", help="丢弃低能量帧")
    _seed(p)
    _force(p)
    p.set_defaults(func=train_command)

    # 评估
    p = _sub("eval", "评估检查点并写出报告")
    p.add_argument("--ckpt", required=True, help="检查点路径")
    p.add_argument("--features", required=True, help="特征目录")
    p.add_argument("--report", required=True, help="报告 CSV 路径 (同名 .json 一并写出)")
    p.add_argument("--split", choices=["train", "test"], default="test", help="评估的数据划分")
    _force(p)
    p.set_defaults(func=eval_command)

    # 加噪
    p = _sub("noise", "按指定信噪比给语料加白噪声")
    p.add_argument("--manifest", required=True, help="清单 CSV")
    p.add_argument("--snr", type=float, required=True, help="信噪比 (dB)")
    p.add_argument("--out", required=True, help="输出目录")
    _seed(p)
    _jobs(p)
    _force(p)
    p.set_defaults(func=noise_command)

    # 查看模型
    p = _sub("inspect", "打印模型结构、参数量和每帧 FLOPs")
    p.add_argument("--ckpt", required=True, help="检查点路径")
    p.add_argument("--frames", type=int, default=DEFAULT_INSPECT_FRAMES, help="每条语音的帧数 (用于整句开销)")
    p.set_defaults(func=inspect_command)

    # 预设实验
    p = _sub("preset", "运行预设实验或整张表")
    p.add_argument("--name", required=True, help="预设名或表名 (table2 ... table7, half, baseline)")
    p.add_argument("--manifest", required=True, help="清单 CSV")
    p.add_argument("--out", required=True, help="输出目录")
    p.add_argument("--epochs", type=int, default=None, help="覆盖预设的最大 epoch 数")
    _seed(p)
    _jobs(p)
    _force(p)
    p.set_defaults(func=preset_command)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1

    try:
        return args.func(args)
    except KeyboardInterrupt:
        logger.info("\n⏹️ 用户中断操作")
        return 1
    except WhisperlineError as e:
        logger.error(f"❌ 错误: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ 文件错误: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
