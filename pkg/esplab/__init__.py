"""
ESP Lab - echo state and fading memory certificates for reservoir systems
"""

__version__ = "2.0.0"
