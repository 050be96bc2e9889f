from django.db import models
from django.utils import timezone


class SuiteRun(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    COMMAND_CHOICES = [
        ('run', 'Run'),
        ('timing', 'Timing'),
        ('memory', 'Memory'),
        ('plot', 'Plot'),
    ]

    suite = models.CharField(max_length=100)
    command = models.CharField(max_length=10, choices=COMMAND_CHOICES, default='run')
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')
    seed = models.IntegerField(null=True, blank=True)
    trials = models.IntegerField(null=True, blank=True)
    created_at = models.DateTimeField(default=timezone.now)
    started_at = models.DateTimeField(null=True, blank=True)
    completed_at = models.DateTimeField(null=True, blank=True)
    variants_completed = models.IntegerField(default=0)
    variants_failed = models.IntegerField(default=0)
    output_dir = models.CharField(max_length=500, blank=True)
    error_message = models.TextField(blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.suite} {self.command} - {self.status} ({self.variants_completed} variants)"

    def mark_running(self):
        self.status = 'running'
        self.started_at = timezone.now()
        self.save()

    def mark_finished(self, completed: int, failed: int, error_message: str = ''):
        self.variants_completed = completed
        self.variants_failed = failed
        self.error_message = error_message
        self.status = 'failed' if failed or error_message else 'completed'
        self.completed_at = timezone.now()
        self.save()
