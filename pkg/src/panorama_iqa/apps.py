"""
Django app configuration for Panorama IQA Toolkit
"""

from django.apps import AppConfig


class PanoramaIQAConfig(AppConfig):
    name = "panorama_iqa"
    verbose_name = "Panorama IQA Toolkit"
