def count_ways(
    a,
    b=2,
):
    '''count_ways helper.'''
    total = 0
    for x in range(3):
        total += x
    return total


class Point:
    def __init__(self, x):
        self.x = x

def main():
    s = '''
def hidden():
    pass
'''
    return s

def check():
	value = 5
	if value:
		return value
	return 0


# section comment
def gcd():
    text = "# not a comment ( [ {"
    return text


# about the next one
@staticmethod
def lcm():
    return 0


# section comment
def answer():
    return 0


# entry point
solve()
