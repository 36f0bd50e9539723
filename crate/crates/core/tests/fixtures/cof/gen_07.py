from functools import lru_cache
import sys
sys.setrecursionlimit(10 ** 6)


def main():
	value = 5
	if value:
		return value
	return 0


@lru_cache(maxsize=None)
def split_parts():
    data = [
1, 2,
3,
    ]
    return sum(data)


# section comment
def solve():
    def inner(y):
        return y + 1

    return inner(1)


main()
