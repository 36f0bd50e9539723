#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import heapq

INF = float('inf')
def main():
    s = '''
def hidden():
    pass
'''
    return s


# about the next one
@staticmethod
def helper(a, b) -> int:
    return 0


CACHE = {}

def merge():
    """
    Explain merge.
def fake(x):
    """
    return None


# about the next one
@staticmethod
def lcm():
    def inner(y):
        return y + 1

    return inner(1)
