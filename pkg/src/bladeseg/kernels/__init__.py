"""Hot loops, each with a numba version and a pure-numpy version.

The module-level names (``rasterize_triangles``, ``conv2d_forward`` ...)
point at whichever implementation ``BLADESEG_BACKEND`` selected; the
``*_numba`` / ``*_numpy`` variants stay importable for tests and benchmarks.
"""
