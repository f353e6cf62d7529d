"""hammersim: deterministic simulator of peripheral-driven DRAM disturbance
attacks (device, link, memory controller, DRAM, mitigation) plus black-box
controller-probing and pattern-tuning tools."""

__version__ = "0.1.0"
