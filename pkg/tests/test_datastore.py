# -*- coding: utf-8 -*-
import sqlite3
from pathlib import Path
from tempfile import TemporaryDirectory
from threading import Semaphore
from unittest import TestCase
from unittest.mock import patch

import sqlalchemy.exc
from eventsourcing.persistence import (
    IntegrityError,
    OperationalError,
    PersistenceError,
    ProgrammingError,
)
from sqlalchemy import text
from sqlalchemy.future import create_engine
from sqlalchemy.orm import sessionmaker

from adjscc.datastore import ResultsDatastore, translate_error


class TestDatastore(TestCase):
    def test_should_be_created_with_url(self) -> None:
        datastore = ResultsDatastore(url="sqlite:///:memory:")
        self.assertIsInstance(datastore, ResultsDatastore)
        self.assertTrue(datastore.is_sqlite_in_memory_db)
        self.assertIsInstance(datastore.access_lock, Semaphore)
        self.assertIsNone(datastore.write_lock)

    def test_should_be_created_with_session_cls(self) -> None:
        session_maker = sessionmaker(bind=create_engine(url="sqlite:///:memory:"))
        datastore = ResultsDatastore(session_maker=session_maker)
        self.assertIsNotNone(datastore.engine)

    def test_without_url_nothing_is_opened(self) -> None:
        datastore = ResultsDatastore()
        self.assertIsNone(datastore.engine)
        with self.assertRaisesRegex(ProgrammingError, "no database URL"):
            datastore.transaction(commit=False)

    def test_file_database_uses_write_lock_and_wal(self) -> None:
        with TemporaryDirectory() as tmp:
            url = f"sqlite:///{Path(tmp) / 'results.db'}"
            datastore = ResultsDatastore(url=url)
            self.assertTrue(datastore.is_sqlite_filedb)
            self.assertIsInstance(datastore.write_lock, Semaphore)
            with datastore.transaction(commit=True) as session:
                session.execute(text("CREATE TABLE t (x INTEGER)"))
            self.assertTrue(datastore.is_sqlite_wal_mode)
            assert datastore.engine is not None
            datastore.engine.dispose()

    def test_nested_transactions_share_the_session(self) -> None:
        datastore = ResultsDatastore(url="sqlite:///:memory:")
        outer = datastore.transaction(commit=True)
        with outer as session:
            inner = datastore.transaction(commit=True)
            self.assertIs(inner, outer)
            with inner as inner_session:
                self.assertIs(inner_session, session)

    def test_read_only_transaction_cannot_be_upgraded(self) -> None:
        datastore = ResultsDatastore(url="sqlite:///:memory:")
        with datastore.transaction(commit=False):
            with self.assertRaises(ProgrammingError):
                datastore.transaction(commit=True)

    def test_driver_errors_are_translated(self) -> None:
        session_maker = sessionmaker(bind=create_engine(url="sqlite:///:memory:"))
        datastore = ResultsDatastore(session_maker=session_maker)
        with self.assertRaises(OperationalError):
            with datastore.transaction(commit=True) as session:
                session.execute(text("SELECT * FROM missing_table"))
                session.flush()

    def test_translation_table(self) -> None:
        integrity = sqlalchemy.exc.IntegrityError("INSERT", {}, Exception("dup"))
        operational = sqlalchemy.exc.OperationalError("SELECT", {}, Exception("x"))
        self.assertIsInstance(translate_error(integrity), IntegrityError)
        self.assertIsInstance(translate_error(operational), OperationalError)
        self.assertIs(type(translate_error(ValueError("x"))), PersistenceError)

    def test_failed_commit_is_rolled_back_and_raised(self) -> None:
        with TemporaryDirectory() as tmp:
            datastore = ResultsDatastore(url=f"sqlite:///{Path(tmp) / 'results.db'}")
            assert datastore.write_lock is not None
            locked = sqlalchemy.exc.OperationalError(
                "COMMIT", {}, sqlite3.OperationalError("database is locked")
            )
            transaction = datastore.transaction(commit=True)
            session = transaction.session
            with patch.object(session, "commit", side_effect=locked):
                with patch.object(session, "rollback") as rollback:
                    with self.assertRaises(OperationalError):
                        with transaction:
                            pass
            rollback.assert_called_once()
            # The write lock was released.
            self.assertTrue(datastore.write_lock.acquire(blocking=False))
            datastore.write_lock.release()
            assert datastore.engine is not None
            datastore.engine.dispose()
