from .lordba_pipeline import LordbaPipeline, MCCheck, get_pipeline

__all__ = ['LordbaPipeline', 'MCCheck', 'get_pipeline']
