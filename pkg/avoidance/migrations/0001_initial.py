# Generated by Django 5.2.6 on 2026-10-19 09:12

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SuiteRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('suite', models.CharField(max_length=100)),
                ('command', models.CharField(choices=[('run', 'Run'), ('timing', 'Timing'), ('memory', 'Memory'), ('plot', 'Plot')], default='run', max_length=10)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('seed', models.IntegerField(blank=True, null=True)),
                ('trials', models.IntegerField(blank=True, null=True)),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('started_at', models.DateTimeField(blank=True, null=True)),
                ('completed_at', models.DateTimeField(blank=True, null=True)),
                ('variants_completed', models.IntegerField(default=0)),
                ('variants_failed', models.IntegerField(default=0)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('error_message', models.TextField(blank=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
