# Copyright (c) 2026 The twinshare Authors. All rights reserved.
#
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file.
"""Collaborative learning from differentially private synthetic twin data."""

import jax

# Gradient checks and the accountant round trips need double precision.
jax.config.update('jax_enable_x64', True)

__version__ = '0.1.0'
