"""
Utility modules for catalogs, run configs, reports and trace downloads
"""

from .helpers import *
from .catalog import Catalog, load_yaml
from .run_config import RunConfig, load_run_config
from .data_saver import Report, ReportSaver, Table, save_cdf, load_cdf
from .trace_downloader import TraceDownloader
