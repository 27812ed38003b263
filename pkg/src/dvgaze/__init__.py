"""Dual-view gaze estimation at desk scale.

Subpackages:

* `dvgaze.geometry` - camera/rectification/gaze math (numpy)
* `dvgaze.blocks`   - the dual-view network and its fusion blocks (torch)
* `dvgaze.scene`    - synthetic dual-camera scene and dataset generator
* `dvgaze.training` - losses, training loop, metrics, gradient checks, ablations
* `dvgaze.config`   - experiment configuration parsing
* `dvgaze.cli`      - the ``dvgaze`` command-line entry point
"""

__version__ = "0.1.0"
