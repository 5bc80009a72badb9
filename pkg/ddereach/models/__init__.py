'''
Example models shipped with the package
'''

import os

MODELS_DIR = os.path.dirname(os.path.abspath(__file__))


def bundled_models():
    return sorted(name[:-len('.dde')] for name in os.listdir(MODELS_DIR) if name.endswith('.dde'))


def bundled_model_path(name):
    '''
    Path of a bundled model file

    Args:
        name (str): model name such as "example1" (".dde" optional)

    Returns:
        (str): absolute path

    Raises:
        FileNotFoundError: no bundled model of that name
    '''
    if not name.endswith('.dde'):
        name += '.dde'
    path = os.path.join(MODELS_DIR, name)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no bundled model {name!r}; available: {', '.join(bundled_models())}")
    return path
