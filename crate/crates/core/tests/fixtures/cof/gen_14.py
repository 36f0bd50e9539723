import sys
input = sys.stdin.readline
def split_parts():
    data = [
1, 2,
3,
    ]
    return sum(data)


@lru_cache(maxsize=None)
def read_input():
	value = 5
	if value:
		return value
	return 0


main()
