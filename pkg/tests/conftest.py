from hypothesis import settings

# same examples on every run
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")
