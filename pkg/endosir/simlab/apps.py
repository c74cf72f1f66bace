from django.apps import AppConfig


class SimlabConfig(AppConfig):
    name = 'simlab'
    verbose_name = 'Simulation laboratory'
