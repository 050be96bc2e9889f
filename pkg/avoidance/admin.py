from django.contrib import admin
from .models import SuiteRun


@admin.register(SuiteRun)
class SuiteRunAdmin(admin.ModelAdmin):
    list_display = ('suite', 'command', 'status', 'variants_completed', 'variants_failed', 'started_at')
    list_filter = ('command', 'status', 'started_at')
    search_fields = ('suite', 'error_message')
    readonly_fields = ('created_at', 'started_at', 'completed_at')
