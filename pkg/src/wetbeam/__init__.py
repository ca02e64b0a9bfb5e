"""Power-minimizing beamforming for power beacons built from a digital feeder
and a passive intelligent transmitting surface (ITS), with fully digital and
hybrid benchmarks."""

__version__ = "0.1.0"
