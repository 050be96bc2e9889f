"""
URL configuration for the negfeed project.

Only the admin is exposed; it lists suite runs.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
