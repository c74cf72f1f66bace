from django.apps import AppConfig


class TwostageConfig(AppConfig):
    name = 'twostage'
    verbose_name = 'Two-stage estimators'
