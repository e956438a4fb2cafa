# -*- coding: utf-8 -*-
from .codec import JSCCModel, build_arch  # noqa
from .factory import Factory  # noqa
