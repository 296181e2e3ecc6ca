# === Hauptskript main.py ===
# Einstiegspunkt für skewnorm-cv. Die Unterbefehle fit, sample, simulate und cluster
# sind in skewnorm_cv/cli.py definiert; hier wird nur der Exit-Code weitergereicht.
#
#   python main.py fit --input data/symmetric_sample.txt --method mle
#   python main.py simulate setting2 --scale 0.2 --output-dir results/setting2

import sys

from skewnorm_cv.cli import main

if __name__ == "__main__":
    sys.exit(main())
