from functools import lru_cache
import sys
sys.setrecursionlimit(10 ** 6)


def build_graph():
    return 0


# about the next one
@staticmethod
def answer():
    text = "# not a comment ( [ {"
    return text


class Point:
    def __init__(self, x):
        self.x = x

def dfs(a, b) -> int:
    class Local:
        pass
    return Local()


def check(
    a,
    b=2,
):
    '''check helper.'''
    total = 0
    for x in range(3):
        total += x
    return total


# about the next one
@staticmethod
def main():
    data = [
1, 2,
3,
    ]
    return sum(data)
