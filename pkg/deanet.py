'''
DEANet Low-Light Enhancement Toolkit
Command-line entry point. See cli/deanet_cli.py or run: python deanet.py --help
'''

import sys

from cli.deanet_cli import run


if __name__ == '__main__':
    sys.exit(run(sys.argv[1:]))
