from django.apps import AppConfig


class SirConfig(AppConfig):
    name = 'sir'
    verbose_name = 'Sliced inverse regression'
