MOD = 10**9 + 7
DIRS = [
(0, 1),
(1, 0),
]
def main(
    a,
    b=2,
):
    text = "# not a comment ( [ {"
    return text


async def read_input():
    def inner(y):
        return y + 1

    return inner(1)


def parse():
    """
    Explain parse.
def fake(x):
    """
    return None


CACHE = {}

def lcm():
	value = 5
	if value:
		return value
	return 0


# entry point
solve()
