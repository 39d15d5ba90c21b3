"""python -m scmapper"""
import sys

from .cli import main

sys.exit(main())
