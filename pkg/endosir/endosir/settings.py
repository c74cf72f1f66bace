"""
Django settings for the endosir project.

Django is used for configuration, the management-command CLI, logging
setup and the test runner. There is no database and no HTTP surface.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is served or signed; the key only satisfies Django's startup checks.
SECRET_KEY = 'endosir-offline-numerical-toolkit'

DEBUG = False

ALLOWED_HOSTS: list = []


# Application definition

INSTALLED_APPS = [
    'endosir',
    'numkit',
    'lasso',
    'sir',
    'twostage',
    'simlab',
]

MIDDLEWARE: list = []

DATABASES: dict = {}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Estimator and experiment defaults. Config files and command-line flags
# override these per run (settings < config file < flags).

ENDOSIR = {
    'SEED': 0,
    'THREADS': 1,
    'OUT_DIR': BASE_DIR / 'runs',
    'SLICES': 10,
    'DIRECTIONS': 1,
    'CV_FOLDS': 10,
    'CV_REPEATS': 1,
    'SECOND_STAGE_TUNING': 'cv',
    'FIRST_STAGE_TUNING': 'bic',
    'EBIC_GAMMA': 0.5,
    'THEORY_CONSTANT': 1.0,
    'STANDARDIZE': False,
    'DIM_REPEATS': 50,
    'DIM_FOLDS': 5,
    'STABILITY_SUBSAMPLES': 100,
    'STABILITY_CUTOFF': 0.75,
    'STABILITY_THRESHOLD': 0.5,
    'STABILITY_ERROR_BOUND': 1.0,
    'REPLICATES': 100,
    'SPARSITY': 5,
    'INSTRUMENTS_PER_COVARIATE': 5,
}


# Logging: every module logs through logging.getLogger(__name__); console
# output goes through rich.

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(name)s: %(message)s'},
    },
    'handlers': {
        'console': {
            'class': 'rich.logging.RichHandler',
            'formatter': 'plain',
            'rich_tracebacks': True,
            'show_path': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'py.warnings': {'handlers': ['console'], 'level': 'WARNING', 'propagate': False},
    },
}
