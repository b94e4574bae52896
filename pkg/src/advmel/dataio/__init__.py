from .emit import AdversarialRecord, adversarial_selector, emit_adversarial_dataset, load_index
from .fixture import Fixture, FixtureSpec, build_fixture, certify, generate_fixture
from .imagecodec import read_image, write_image
from .manifest import ManifestRecord, load_instances, load_manifest, save_manifest
from .modelio import load_model, save_model
