# -*- coding: utf-8 -*-
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Type
from uuid import UUID

import structlog

from adjscc.datastore import ResultsDatastore, Transaction
from adjscc.evaluation import MismatchRow, SweepRow
from adjscc.records import (  # type: ignore
    ResultRecord,
    SweepPointRecord,
)
from adjscc.training import EpochRecord

log = structlog.get_logger()


@dataclass(frozen=True)
class SweepPoint:
    model_id: str
    snr_fb_db: float
    snr_true_db: float
    mean_psnr_db: float
    std_psnr_db: float
    repeats: int

    @classmethod
    def from_sweep_row(cls, row: SweepRow) -> "SweepPoint":
        return cls(
            model_id=row.model_id,
            snr_fb_db=row.snr_test_db,
            snr_true_db=row.snr_test_db,
            mean_psnr_db=row.mean_psnr_db,
            std_psnr_db=row.std_psnr_db,
            repeats=row.repeats,
        )

    @classmethod
    def from_mismatch_row(cls, row: MismatchRow, repeats: int) -> "SweepPoint":
        return cls(
            model_id=row.model_id,
            snr_fb_db=row.snr_fb_db,
            snr_true_db=row.snr_true_db,
            mean_psnr_db=row.mean_psnr_db,
            std_psnr_db=row.std_psnr_db,
            repeats=repeats,
        )


class ResultsRecorder:
    def __init__(
        self,
        datastore: ResultsDatastore,
        table_name: str,
        base_cls: Type[ResultRecord],
    ):
        self.datastore = datastore
        self.table_name = table_name
        record_cls_name = "".join(
            [s.capitalize() for s in table_name.rstrip("s").split("_")]
        )
        self.record_cls = self.datastore.define_record_class(
            cls_name=record_cls_name, table_name=table_name, base_cls=base_cls
        )
        self.table = self.record_cls.__table__

    def transaction(self, commit: bool = True) -> Transaction:
        return self.datastore.transaction(commit=commit)

    def create_table(self) -> None:
        assert self.datastore.engine is not None
        self.table.create(self.datastore.engine, checkfirst=True)

    def _insert(self, rows: Sequence[Any]) -> None:
        if not rows:
            return
        with self.transaction(commit=True) as session:
            for row in rows:
                session.add(row)
        log.info("results recorded", table=self.table_name, rows=len(rows))


class TrainLogRecorder(ResultsRecorder):
    def __init__(self, datastore: ResultsDatastore, table_name: str = "train_epochs"):
        super().__init__(
            datastore, table_name, datastore.base_train_epoch_record_cls
        )

    def insert_epochs(self, run_id: UUID, epochs: Sequence[EpochRecord]) -> None:
        self._insert(
            [
                self.record_cls(
                    run_id=run_id,
                    epoch=e.epoch,
                    loss=e.loss,
                    seconds=e.seconds,
                    checkpoint_path=e.checkpoint_path,
                )
                for e in epochs
            ]
        )

    def select_epochs(self, run_id: UUID) -> List[EpochRecord]:
        with self.transaction(commit=False) as session:
            q = session.query(self.record_cls)
            q = q.filter(self.record_cls.run_id == run_id)
            q = q.order_by(self.record_cls.epoch)
            return [
                EpochRecord(
                    epoch=r.epoch,
                    loss=r.loss,
                    seconds=r.seconds,
                    checkpoint_path=r.checkpoint_path,
                )
                for r in q
            ]


class SweepRecorder(ResultsRecorder):
    def __init__(self, datastore: ResultsDatastore, table_name: str = "sweep_points"):
        super().__init__(
            datastore, table_name, datastore.base_sweep_point_record_cls
        )

    def insert_points(self, run_id: UUID, points: Sequence[SweepPoint]) -> None:
        self._insert(
            [
                self.record_cls(
                    run_id=run_id,
                    model_id=p.model_id,
                    snr_fb_db=p.snr_fb_db,
                    snr_true_db=p.snr_true_db,
                    mean_psnr_db=p.mean_psnr_db,
                    std_psnr_db=p.std_psnr_db,
                    repeats=p.repeats,
                )
                for p in points
            ]
        )

    def select_points(
        self, run_id: UUID, model_id: Optional[str] = None
    ) -> List[SweepPoint]:
        record: Type[SweepPointRecord] = self.record_cls
        with self.transaction(commit=False) as session:
            q = session.query(record).filter(record.run_id == run_id)
            if model_id is not None:
                q = q.filter(record.model_id == model_id)
            q = q.order_by(record.model_id, record.snr_fb_db, record.snr_true_db)
            return [
                SweepPoint(
                    model_id=r.model_id,
                    snr_fb_db=r.snr_fb_db,
                    snr_true_db=r.snr_true_db,
                    mean_psnr_db=r.mean_psnr_db,
                    std_psnr_db=r.std_psnr_db,
                    repeats=r.repeats,
                )
                for r in q
            ]
