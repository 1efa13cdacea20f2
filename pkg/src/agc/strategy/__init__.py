"""Upper-level strategy search: schedules, the genetic optimizer and soft actor-critic."""
