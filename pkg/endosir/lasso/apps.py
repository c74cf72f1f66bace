from django.apps import AppConfig


class LassoConfig(AppConfig):
    name = 'lasso'
    verbose_name = 'Lasso solver and tuning'
