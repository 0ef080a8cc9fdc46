"""Software biosignal station: converter model, simulator, acquisition
pipeline, analyses, session store, and streaming server."""

__version__ = "0.1.0"
