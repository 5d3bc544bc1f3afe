"""DOA estimation for hybrid massive-MIMO receive arrays with overlapped subarrays."""

__version__ = "0.1.0"
