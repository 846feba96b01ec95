import { describe, expect, it } from 'vitest'

import { ApiClient, ApiError } from '../src/api.js'
import { FakeService, makeQueries } from './fake_service.js'

const classNames = ['bg', 'a', 'b']

function service() {
  return new FakeService(
    classNames,
    makeQueries(classNames, [
      { pseudo: 1, truth: 1 },
      { pseudo: 2, truth: 0 },
    ]),
  )
}

describe('api client', () => {
  it('maps 204 to null on next-query', async () => {
    const svc = service()
    const client = new ApiClient('', svc.fetch)
    svc.answers.set('r001-q0000', { verdict: 'confirmed' })
    svc.answers.set('r001-q0001', { verdict: 'confirmed' })
    expect(await client.nextQuery('u')).toBeNull()
  })

  it('retries transient failures until acknowledged', async () => {
    const svc = service()
    svc.failNextSubmits = 2
    const client = new ApiClient('', svc.fetch)
    const result = await client.submitAnswer('r001-q0000', { verdict: 'confirmed' })
    expect(result).toBe('recorded')
    expect(svc.answers.size).toBe(1)
  }, 10_000)

  it('treats 409 as a terminal conflict, not silent loss', async () => {
    const svc = service()
    const client = new ApiClient('', svc.fetch)
    await client.submitAnswer('r001-q0000', { verdict: 'confirmed' })
    const second = await client.submitAnswer('r001-q0000', { verdict: 'confirmed' })
    expect(second).toBe('conflict')
  })

  it('surfaces validation errors immediately', async () => {
    const svc = service()
    const client = new ApiClient('', svc.fetch)
    await expect(
      client.submitAnswer('r001-q0000', { verdict: 'corrected', label: 1 }),
    ).rejects.toThrowError(ApiError)
    expect(svc.answers.size).toBe(0)
  })

  it('reports session and advance guard', async () => {
    const svc = service()
    const client = new ApiClient('', svc.fetch)
    const info = await client.session()
    expect(info.queries_pending).toBe(2)
    expect(await client.advanceRound()).toBe(false) // outstanding queries
  })
})
