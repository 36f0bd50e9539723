from functools import lru_cache
import sys
sys.setrecursionlimit(10 ** 6)


def main():
    """
    Explain main.
def fake(x):
    """
    return None
