import logging
import os

import jinja2
import matplotlib
matplotlib.use('Agg')  # Use the Agg backend which is non-interactive
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from helpers import atomic_write_text, write_json

# Fixed salt and no date keep SVG output byte-identical between runs
matplotlib.rcParams['svg.hashsalt'] = 'dnpu-sim'
SVG_METADATA = {'Date': None}


class RunReportGenerator:
    """
    Write the artefacts of a pipeline stage: CSV tables, SVG figures, JSON documents
    and the HTML run summary.
    """

    def __init__(self, report_dir):
        """
        Args:
            report_dir (str): Stage output directory, created when missing
        """
        self.report_dir = report_dir
        self.logger = logging.getLogger(__name__)
        os.makedirs(report_dir, exist_ok=True)

        self.color_palette = {
            'primary': '#ff6b35',
            'secondary': '#2ec4b6',
            'tertiary': '#6772e5',
            'neutral': '#4f566b',
        }

    def path(self, filename):
        return os.path.join(self.report_dir, filename)

    def write_csv(self, frame: pd.DataFrame, filename):
        path = self.path(filename)
        atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n'))
        self.logger.debug(f"Wrote {path} ({len(frame)} rows)")
        return path

    def write_json(self, payload, filename):
        path = self.path(filename)
        write_json(path, payload)
        self.logger.debug(f"Wrote {path}")
        return path

    def write_spectrogram_svg(self, times, freqs, power_db, filename, title, floor_db=-100.0):
        """
        Render a spectrogram (freqs x times grid in dB) as SVG.

        Returns:
            str: Path of the SVG file
        """
        fig, ax = plt.subplots(figsize=(8, 4.5))
        mesh = ax.pcolormesh(times, freqs, np.maximum(power_db, floor_db), shading='auto', cmap='magma')
        fig.colorbar(mesh, ax=ax, label='Power (dB)')
        ax.set_xlabel('Time (s)')
        ax.set_ylabel('Frequency (Hz)')
        ax.set_title(title)
        return self._save_svg(fig, filename)

    def write_histogram_svg(self, values, filename, title, xlabel, log_x=True, bins=30):
        values = np.asarray(values, dtype=np.float64)
        fig, ax = plt.subplots(figsize=(6, 4))
        log_bins = log_x and values.min() > 0 and values.max() > values.min()
        edges = np.geomspace(values.min(), values.max(), bins + 1) if log_bins else bins
        ax.hist(values, bins=edges, color=self.color_palette['secondary'])
        if log_bins:
            ax.set_xscale('log')
        ax.set_xlabel(xlabel)
        ax.set_ylabel('Count')
        ax.set_title(title)
        ax.grid(axis='y', linestyle='--', alpha=0.7)
        return self._save_svg(fig, filename)

    def write_training_curve_svg(self, history: pd.DataFrame, filename, title):
        fig, ax1 = plt.subplots(figsize=(7, 4))
        ax1.plot(history['epoch'], history['train_loss'], color=self.color_palette['primary'])
        ax1.set_xlabel('Epoch')
        ax1.set_ylabel('Train loss', color=self.color_palette['primary'])
        ax2 = ax1.twinx()
        ax2.plot(history['epoch'], history['test_accuracy'], color=self.color_palette['tertiary'])
        ax2.set_ylabel('Test accuracy', color=self.color_palette['tertiary'])
        ax1.set_title(title)
        return self._save_svg(fig, filename)

    def _save_svg(self, fig, filename):
        path = self.path(filename)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata=SVG_METADATA)
        plt.close(fig)
        self.logger.debug(f"Wrote {path}")
        return path

    def render_summary(self, data, template_name='summary_template.html'):
        """
        Render the HTML run summary.

        Args:
            data (dict): Values referenced by the template
            template_name (str): Template file under reporting/templates

        Returns:
            str: Rendered HTML
        """
        template_dir = os.path.join(os.path.dirname(__file__), 'templates')
        try:
            env = jinja2.Environment(
                loader=jinja2.FileSystemLoader(template_dir),
                autoescape=True
            )
            env.filters['format_number'] = lambda x: f"{x:,}"
            env.filters['format_percentage'] = lambda x: f"{100 * x:.2f}%"
            env.filters['format_si'] = format_si
            template = env.get_template(template_name)
            return template.render(**data)
        except jinja2.exceptions.TemplateNotFound:
            self.logger.error(f"Template '{template_name}' not found in {template_dir}")
            raise FileNotFoundError(f"Template '{template_name}' not found in {template_dir}")
        except jinja2.exceptions.TemplateSyntaxError as e:
            self.logger.error(f"Template syntax error in '{template_name}': {str(e)}")
            raise

    def write_summary(self, data, filename='summary.html'):
        path = self.path(filename)
        atomic_write_text(path, self.render_summary(data))
        self.logger.info(f"Run summary written to {path}")
        return path


def format_si(value, unit=''):
    """Format a value with an SI prefix, e.g. 7.8756e-05 J -> '78.756 uJ'."""
    if value is None:
        return 'n/a'
    if value == 0:
        return f"0 {unit}".strip()
    prefixes = [(1e-15, 'f'), (1e-12, 'p'), (1e-9, 'n'), (1e-6, 'u'), (1e-3, 'm'), (1.0, ''), (1e3, 'k')]
    magnitude = abs(value)
    factor, prefix = prefixes[0]
    for f, p in prefixes:
        if magnitude >= f:
            factor, prefix = f, p
    return f"{value / factor:.3f} {prefix}{unit}".strip()
