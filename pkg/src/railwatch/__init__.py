"""Track monitoring pipeline for locomotive-camera frame sequences.

Processes ordered frame streams through a bird's-eye rectification of the
track region, extracts the rail pair per scan row, flags lateral zig-zag
misalignment (sunkinks), runs pluggable per-frame detectors for defects and
lineside assets, determines signal color by masking, deduplicates assets
across frames, and aggregates everything into a per-segment track health
index with machine-readable reports and a GeoJSON map export.
"""

__version__ = "0.1.0"
