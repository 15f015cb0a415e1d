import json
import logging
import os
import platform
import random
import sys
import time

import numpy as np
import torch


logger = logging.getLogger(__name__)


def set_seed(seed=42):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    # If you are using CUDA:
    if torch.cuda.is_available():
        torch.cuda.manual_seed(seed)
        torch.cuda.manual_seed_all(seed)
    # Bit-identical reruns on one build configuration
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False


def write_provenance(output_dir, command, config_text=None, seeds=None, extra=None, filename="provenance.json"):
    """
    Write a provenance record next to the run outputs: command line, resolved
    config, seeds, library versions and start time.
    """
    os.makedirs(output_dir, exist_ok=True)
    record = {
        "command": command,
        "argv": sys.argv,
        "started": time.strftime("%Y-%m-%d %H:%M:%S"),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "seeds": seeds or {},
        "config": config_text,
    }
    record.update(extra or {})
    path = os.path.join(output_dir, filename)
    with open(path, "w", encoding="UTF8") as f:
        json.dump(record, f, indent=2)
    logger.info("Provenance written to %s", path)
    return path
