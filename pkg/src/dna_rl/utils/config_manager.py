import os
import configparser
import logging

log = logging.getLogger(__name__)


class ConfigManager:
    """Manages application configuration using a properties file"""

    def __init__(self, config_path=None):
        """Initialize the configuration manager with a path to the config file

        Args:
            config_path (str, optional): Path to the config file. Defaults to None,
                which will use the default location (project_root/config.ini).
        """
        if config_path is None:
            # Default location: project root directory (above src/)
            here = os.path.abspath(__file__)
            project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.dirname(here))))
            config_path = os.path.join(project_root, "config.ini")

        self.config_path = config_path
        self.config = configparser.ConfigParser(interpolation=None)

        # Load config, or fall back to in-memory defaults without writing
        if os.path.exists(config_path):
            self.load()
        else:
            self.create_default()

    def load(self):
        """Load configuration from file"""
        try:
            self.config.read(self.config_path)
            log.debug("Configuration loaded from %s", self.config_path)
        except configparser.Error as e:
            log.error("Error loading configuration: %s", e)
            self.create_default()

    def create_default(self):
        """Create default configuration"""
        self.config["Application"] = {
            "default_log_level": "INFO",
            "log_format": "%(levelname)s:%(name)s:%(lineno)d:%(message)s",
        }

        self.config["Output"] = {
            "default_out_dir": "runs",
            "metrics_filename": "metrics.jsonl",
            "metrics_csv_filename": "metrics.csv",
            "manifest_filename": "manifest.json",
        }

        self.config["Checkpoint"] = {
            "checkpoint_every": "0",
            "final_checkpoint_name": "final.ckpt",
        }

        self.config["NoiseScale"] = {
            "probe_ema_decay": "0.99",
        }

        self.config["Plots"] = {
            "smoothing_decay": "0.9",
        }

    def get(self, section, option, default=None, value_type=str):
        """Get a configuration value with type conversion

        Args:
            section (str): Configuration section
            option (str): Option name
            default: Default value if option doesn't exist
            value_type: Type to convert the value to (str, int, float, bool)

        Returns:
            The configuration value converted to the specified type
        """
        try:
            if not self.config.has_section(section) or not self.config.has_option(section, option):
                return default

            value = self.config.get(section, option)

            if value_type == bool:
                return value.lower() in ("true", "yes", "1", "on")
            elif value_type == int:
                return self.config.getint(section, option)
            elif value_type == float:
                return self.config.getfloat(section, option)
            else:
                return value
        except ValueError as e:
            log.error("Error getting config value %s.%s: %s", section, option, e)
            return default

    def get_default_log_level(self):
        """Get the default logging level

        Returns:
            str: The default logging level (INFO, DEBUG, etc.)
        """
        return self.get("Application", "default_log_level", "INFO")

    def get_log_format(self):
        """Get the log format string

        Returns:
            str: The log format string
        """
        return self.get("Application", "log_format", "%(levelname)s:%(name)s:%(lineno)d:%(message)s")

    def get_default_out_dir(self):
        return self.get("Output", "default_out_dir", "runs")

    def get_metrics_filename(self):
        """Get the JSON-lines metrics file name

        Returns:
            str: File name relative to a run's output directory
        """
        return self.get("Output", "metrics_filename", "metrics.jsonl")

    def get_metrics_csv_filename(self):
        return self.get("Output", "metrics_csv_filename", "metrics.csv")

    def get_manifest_filename(self):
        return self.get("Output", "manifest_filename", "manifest.json")

    def get_checkpoint_every(self):
        """Get the default checkpoint interval in outer iterations

        Returns:
            int: 0 disables periodic checkpoints
        """
        return self.get("Checkpoint", "checkpoint_every", 0, int)

    def get_final_checkpoint_name(self):
        return self.get("Checkpoint", "final_checkpoint_name", "final.ckpt")

    def get_probe_ema_decay(self):
        """Get the default EMA decay for the noise-scale probes

        Returns:
            float: weight on the previous EMA value
        """
        return self.get("NoiseScale", "probe_ema_decay", 0.99, float)

    def get_smoothing_decay(self):
        return self.get("Plots", "smoothing_decay", 0.9, float)


# Create a singleton instance
config = ConfigManager()
