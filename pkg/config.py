"""
whisperline 配置文件
所有可调参数集中在这里，环境变量只在导入时读取一次
"""

import os
from pathlib import Path

PROJECT_ROOT = Path(__file__).parent

# 日志配置
LOG_LEVEL = os.getenv("WHISPERLINE_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = os.getenv("WHISPERLINE_LOG_FILE", "logs/whisperline.log")
# console | file | both
LOG_OUTPUT = os.getenv("WHISPERLINE_LOG_OUTPUT", "console")

# 全局默认随机种子（命令行 --seed 优先）
DEFAULT_SEED = int(os.getenv("WHISPERLINE_SEED", "0"))

# 音频
SUPPORTED_RATES = (44100, 16000)
DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0

# 重采样 44.1k -> 16k (160/441)
RESAMPLE_UP = 160
RESAMPLE_DOWN = 441
RESAMPLE_TAPS_PER_PHASE = 64
RESAMPLE_KAISER_BETA = 8.0
RESAMPLE_CUTOFF_HZ = 7000.0

# 分帧与特征
FRAME_SIZE = 1024
HOP_DIVISOR = 8
LOG_FLOOR = 1e-10
NORM_STD_FLOOR = 1e-8
N_MELS = 64
N_MFCC = 64

# 训练默认值
DEFAULT_BATCH_SIZE = 128
DEFAULT_MAX_EPOCHS = 50
DEFAULT_LR = 1e-3
DEFAULT_DROPOUT = 0.5
DEFAULT_VAL_FRACTION = 0.1
DEFAULT_PATIENCE = 5

# 实验预设
PRESETS_FILE = PROJECT_ROOT / "presets.yaml"
