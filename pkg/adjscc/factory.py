# -*- coding: utf-8 -*-
from eventsourcing.utils import Environment, strtobool

from adjscc.datastore import ResultsDatastore
from adjscc.recorders import SweepRecorder, TrainLogRecorder


class Factory:
    """
    Builds the results datastore and its recorders from an environment.
    Keys are looked up with the environment's name as prefix first, e.g.
    ``ADJSCC_SQLALCHEMY_URL`` before ``SQLALCHEMY_URL``.
    """

    SQLALCHEMY_URL = "SQLALCHEMY_URL"
    SQLALCHEMY_AUTOFLUSH = "SQLALCHEMY_AUTOFLUSH"
    CREATE_TABLE = "CREATE_TABLE"

    datastore_class = ResultsDatastore
    train_log_recorder_class = TrainLogRecorder
    sweep_recorder_class = SweepRecorder

    def __init__(self, env: Environment):
        self.env = env
        db_url = self.env.get(self.SQLALCHEMY_URL)
        autoflush = strtobool(self.env.get(self.SQLALCHEMY_AUTOFLUSH) or "True")
        self.datastore = self.datastore_class(url=db_url, autoflush=bool(autoflush))

    @property
    def is_configured(self) -> bool:
        return self.datastore.engine is not None

    def train_log_recorder(self) -> TrainLogRecorder:
        recorder = self.train_log_recorder_class(datastore=self.datastore)
        if self.env_create_table() and self.is_configured:
            recorder.create_table()
        return recorder

    def sweep_recorder(self) -> SweepRecorder:
        recorder = self.sweep_recorder_class(datastore=self.datastore)
        if self.env_create_table() and self.is_configured:
            recorder.create_table()
        return recorder

    def env_create_table(self) -> bool:
        default = "yes"
        return bool(strtobool(self.env.get(self.CREATE_TABLE) or default))
