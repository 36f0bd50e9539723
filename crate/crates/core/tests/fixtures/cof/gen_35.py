import sys
@lru_cache(maxsize=None)
def read_input():
    data = [
1, 2,
3,
    ]
    return sum(data)

def gcd():
    class Local:
        pass
    return Local()


@lru_cache(maxsize=None)
def count_ways():
    return 0


class Point:
    def __init__(self, x):
        self.x = x

def main():
    '''main helper.'''
    total = 0
    for x in range(3):
        total += x
    return total


CACHE = {}

def build_graph(
    a,
    b=2,
):
    x = 1 + \
        2
    # comment inside

    return x