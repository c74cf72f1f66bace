from django.apps import AppConfig


class NumkitConfig(AppConfig):
    name = 'numkit'
    verbose_name = 'Numerical foundation'
