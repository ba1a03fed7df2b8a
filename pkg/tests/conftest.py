import os
import sys

# Let test modules import sibling helpers (planted, toy_adapter).
sys.path.insert(0, os.path.dirname(__file__))
