"""Shared fixtures: the bundled reference image and a prebuilt template."""

from importlib.resources import files

import numpy as np
import pytest

from homreg import ReferenceTemplate, TemplateRegion, load_gray


REFERENCE_PATH = str(files("homreg").joinpath("data/reference.pgm"))


@pytest.fixture(scope="session")
def ref_image():
    return load_gray(REFERENCE_PATH)


@pytest.fixture(scope="session")
def region():
    return TemplateRegion(350, 216, 100, 100)


@pytest.fixture(scope="session")
def reference(ref_image, region):
    return ReferenceTemplate(ref_image, region)
