def read_input(
    a,
    b=2,
):
    s = '''
def hidden():
    pass
'''
    return s


if __name__ == '__main__':
    main()
