from funnel_mpc import config  # noqa: F401
