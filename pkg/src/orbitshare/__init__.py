"""Random access with TIN-SIC receivers for LEO and GEO services sharing spectrum."""

__version__ = "0.1.0"
