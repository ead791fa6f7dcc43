from loguru import logger

from xvguard.logger import Logger, get_logger


def _capture(name):
    records = []
    sink = logger.add(lambda message: records.append(message.record), filter=lambda r: r["extra"].get("name") == name)
    return records, sink


def test_get_logger_is_cached():
    """Test a name maps to one bound logger"""
    assert get_logger("cache-check") is get_logger("cache-check")


def test_records_carry_their_name():
    """Test bound loggers tag their records"""
    records, sink = _capture("tagged")
    try:
        get_logger("tagged").info("epoch 1 done")
    finally:
        logger.remove(sink)

    assert [r["message"] for r in records] == ["epoch 1 done"]
    assert records[0]["extra"]["name"] == "tagged"


def test_logger_mixin():
    """Test subclasses log under their class name"""

    class Harness(Logger):
        def run(self):
            self.logger.warning("slow step")

    records, sink = _capture("Harness")
    try:
        Harness().run()
    finally:
        logger.remove(sink)

    assert [(r["level"].name, r["message"]) for r in records] == [("WARNING", "slow step")]
